//! File formats: CSV exports (17 significant digits), JSON sidecars and the
//! binary hierarchy container.
//!
//! Everything written here is byte-reproducible for a fixed configuration
//! and seed; wall-clock information is confined to metadata sidecars.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::covariance::CovarianceMatrix;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::noise::BrownianHierarchy;
use crate::real::Real;
use crate::scheme::Trajectory;
use crate::spectral::{CollocationGrid, SineTable};

/// 17 significant digits, enough to reconstruct the exact `f64`.
pub fn fmt17<T: Real>(v: T) -> String {
    format!("{:.16e}", v.to_f64().unwrap_or(f64::NAN))
}

/// `covariance.csv`: header `k,l,value`, one row per matrix entry.
pub fn write_covariance_csv<T: Real, W: Write>(cov: &CovarianceMatrix<T>, out: W) -> Result<()> {
    let mut w = BufWriter::new(out);
    writeln!(w, "k,l,value")?;
    for k in 1..=cov.dim() {
        for l in 1..=cov.dim() {
            writeln!(w, "{},{},{}", k, l, fmt17(cov.get(k, l)))?;
        }
    }
    w.flush()?;
    Ok(())
}

/// One convergence measurement.
#[derive(Debug, Clone, Serialize)]
pub struct ErrorRecordOut {
    pub seed: u64,
    pub n_modes: usize,
    pub m_steps: usize,
    pub sup_error: f64,
    pub runtime_s: f64,
}

/// `errors.csv`: header `seed,N,M,sup_error,runtime_s`.
///
/// By default `runtime_s` is written as zero so identical configurations
/// produce byte-identical files; measured runtimes live in the run metadata
/// (pass `timings = true` to put them in the CSV instead).
pub fn write_errors_csv<W: Write>(records: &[ErrorRecordOut], timings: bool, out: W) -> Result<()> {
    let mut w = BufWriter::new(out);
    writeln!(w, "seed,N,M,sup_error,runtime_s")?;
    for r in records {
        let rt = if timings { r.runtime_s } else { 0.0 };
        writeln!(
            w,
            "{},{},{},{},{}",
            r.seed,
            r.n_modes,
            r.m_steps,
            fmt17(r.sup_error),
            fmt17(rt)
        )?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RateFitOut {
    pub slope: f64,
    pub intercept: f64,
    pub residual: f64,
    pub points: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeedFitOut {
    pub seed: u64,
    pub fit: Option<RateFitOut>,
}

/// `rates.json` payload.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RatesOut {
    pub slope: f64,
    pub intercept: f64,
    pub residual: f64,
    pub per_seed: Vec<SeedFitOut>,
}

pub fn write_json<S: Serialize, W: Write>(value: &S, out: W) -> Result<()> {
    let mut w = BufWriter::new(out);
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Error::Serialize(e.to_string()))?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

/// `trajectory.csv`: header `t,x_1..x_G`; one row per stored state, the
/// field evaluated on a `g_e`-point collocation grid.
pub fn write_trajectory_csv<T: Real, W: Write>(
    traj: &Trajectory<T>,
    g_e: usize,
    out: W,
) -> Result<()> {
    let grid = CollocationGrid::new(g_e);
    let table = SineTable::new(&grid, traj.n_modes());
    let mut w = BufWriter::new(out);
    let mut header = String::from("t");
    for j in 1..=g_e {
        header.push_str(&format!(",x_{j}"));
    }
    writeln!(w, "{header}")?;
    let mut vals = vec![T::zero(); g_e];
    for (idx, st) in traj.states().iter().enumerate() {
        table.eval_into(st.coeffs(), &mut vals);
        let mut line = fmt17(traj.times()[idx]);
        for v in &vals {
            line.push(',');
            line.push_str(&fmt17(*v));
        }
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}

const TRAJECTORY_MAGIC: &[u8; 8] = b"SPDETJ01";

/// Raw contents of a trajectory file.
#[derive(Debug, Clone)]
pub struct TrajectoryData {
    pub n_modes: usize,
    pub m_steps: usize,
    pub t_final: f64,
    pub noise_hash: u64,
    pub times: Vec<f64>,
    /// Row-major stored states, `times.len() × n_modes` coefficients.
    pub coeffs: Vec<f64>,
}

/// Compact binary of the stored coefficients: magic, `n_modes: u64`,
/// `m_steps: u64`, `stored: u64`, `t_final: f64`, `noise_hash: u64`, then
/// the stored times and the row-major coefficient block, all little-endian
/// `f64`.
pub fn save_trajectory_bin<T: Real>(traj: &Trajectory<T>, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(TRAJECTORY_MAGIC)?;
    w.write_all(&(traj.n_modes() as u64).to_le_bytes())?;
    w.write_all(&(traj.m_steps() as u64).to_le_bytes())?;
    w.write_all(&(traj.states().len() as u64).to_le_bytes())?;
    w.write_all(&traj.t_final().to_f64().unwrap().to_le_bytes())?;
    w.write_all(&traj.noise_hash().to_le_bytes())?;
    for &t in traj.times() {
        w.write_all(&t.to_f64().unwrap().to_le_bytes())?;
    }
    for st in traj.states() {
        for k in 0..traj.n_modes() {
            let v = st.coeffs().get(k).copied().unwrap_or_else(T::zero);
            w.write_all(&v.to_f64().unwrap().to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_trajectory_bin(path: &Path) -> Result<TrajectoryData> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != TRAJECTORY_MAGIC {
        return Err(Error::config("not a trajectory file (bad magic)"));
    }
    let mut buf = [0u8; 8];
    let mut read_u64 = |r: &mut BufReader<File>| -> Result<u64> {
        r.read_exact(&mut buf)?;
        Ok(u64::from_le_bytes(buf))
    };
    let n_modes = read_u64(&mut r)? as usize;
    let m_steps = read_u64(&mut r)? as usize;
    let stored = read_u64(&mut r)? as usize;
    let t_final = f64::from_bits(read_u64(&mut r)?);
    let noise_hash = read_u64(&mut r)?;
    if n_modes == 0 || stored == 0 || n_modes > (1 << 24) || stored > (1 << 32) {
        return Err(Error::config("trajectory file has implausible dimensions"));
    }
    let mut times = Vec::with_capacity(stored);
    let mut byte8 = [0u8; 8];
    for _ in 0..stored {
        r.read_exact(&mut byte8)?;
        times.push(f64::from_le_bytes(byte8));
    }
    let mut coeffs = Vec::with_capacity(stored * n_modes);
    for _ in 0..stored * n_modes {
        r.read_exact(&mut byte8)?;
        coeffs.push(f64::from_le_bytes(byte8));
    }
    Ok(TrajectoryData {
        n_modes,
        m_steps,
        t_final,
        noise_hash,
        times,
        coeffs,
    })
}

const HIERARCHY_MAGIC: &[u8; 8] = b"SPDEBH01";

/// JSON sidecar for a serialized hierarchy.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HierarchyMeta {
    pub seed: u64,
    pub kernel: String,
    pub sigma_hash: u64,
    pub noise_hash: u64,
    pub modes: usize,
    pub steps: usize,
    pub t_final: f64,
}

/// Raw contents of a hierarchy file.
#[derive(Debug, Clone)]
pub struct HierarchyData {
    pub modes: usize,
    pub steps: usize,
    pub t_final: f64,
    pub seed: u64,
    pub sigma_hash: u64,
    pub increments: Matrix<f64>,
}

/// Binary layout: magic, `modes: u64`, `steps: u64`, `t_final: f64`,
/// `seed: u64`, `sigma_hash: u64`, then `steps·modes` little-endian `f64`
/// increments, row-major by step.
pub fn save_hierarchy<T: Real>(h: &BrownianHierarchy<T>, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(HIERARCHY_MAGIC)?;
    w.write_all(&(h.modes() as u64).to_le_bytes())?;
    w.write_all(&(h.steps() as u64).to_le_bytes())?;
    w.write_all(&h.t_final().to_f64().unwrap().to_le_bytes())?;
    w.write_all(&h.seed().to_le_bytes())?;
    w.write_all(&h.realization().factor().sigma_hash().to_le_bytes())?;
    for m in 0..h.steps() {
        for &v in h.increments().row(m) {
            w.write_all(&v.to_f64().unwrap().to_le_bytes())?;
        }
    }
    w.flush()?;

    let meta = HierarchyMeta {
        seed: h.seed(),
        kernel: "see covariance provenance".to_string(),
        sigma_hash: h.realization().factor().sigma_hash(),
        noise_hash: h.noise_hash(),
        modes: h.modes(),
        steps: h.steps(),
        t_final: h.t_final().to_f64().unwrap(),
    };
    let meta_path = sidecar_path(path);
    write_json(&meta, File::create(meta_path)?)?;
    Ok(())
}

/// `<file>.json` next to the binary.
pub fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut os = path.as_os_str().to_owned();
    os.push(".json");
    std::path::PathBuf::from(os)
}

pub fn load_hierarchy(path: &Path) -> Result<HierarchyData> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != HIERARCHY_MAGIC {
        return Err(Error::config("not a hierarchy file (bad magic)"));
    }
    let mut u64buf = [0u8; 8];
    let mut read_u64 = |r: &mut BufReader<File>| -> Result<u64> {
        r.read_exact(&mut u64buf)?;
        Ok(u64::from_le_bytes(u64buf))
    };
    let modes = read_u64(&mut r)? as usize;
    let steps = read_u64(&mut r)? as usize;
    let t_final = f64::from_bits(read_u64(&mut r)?);
    let seed = read_u64(&mut r)?;
    let sigma_hash = read_u64(&mut r)?;
    if modes == 0 || steps == 0 || modes > (1 << 24) || steps > (1 << 32) {
        return Err(Error::config("hierarchy file has implausible dimensions"));
    }
    let mut increments = Matrix::zeros(steps, modes);
    let mut buf = [0u8; 8];
    for m in 0..steps {
        for k in 0..modes {
            r.read_exact(&mut buf)?;
            increments.row_mut(m)[k] = f64::from_le_bytes(buf);
        }
    }
    Ok(HierarchyData {
        modes,
        steps,
        t_final,
        seed,
        sigma_hash,
        increments,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariance::{assemble_covariance, factorize, Kernel};
    use crate::noise::sample_brownian;
    use std::sync::Arc;

    #[test]
    fn fmt17_roundtrips_f64() {
        for v in [
            1.0f64,
            -0.1,
            std::f64::consts::PI,
            1.23456789e-12,
            3.0 / 7.0,
        ] {
            let s = fmt17(v);
            let back: f64 = s.parse().unwrap();
            assert_eq!(v, back, "{s}");
        }
    }

    #[test]
    fn covariance_csv_shape_and_symmetry() {
        let cov = assemble_covariance(&Kernel::triangular(0.2f64).unwrap(), 5, 64).unwrap();
        let mut buf = Vec::new();
        write_covariance_csv(&cov, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "k,l,value");
        assert_eq!(lines.len(), 1 + 25);
        // (k,l) and (l,k) carry the same value.
        let mut entries = std::collections::HashMap::new();
        for line in &lines[1..] {
            let parts: Vec<&str> = line.split(',').collect();
            entries.insert(
                (parts[0].to_string(), parts[1].to_string()),
                parts[2].to_string(),
            );
        }
        for k in 1..=5 {
            for l in 1..=5 {
                assert_eq!(
                    entries[&(k.to_string(), l.to_string())],
                    entries[&(l.to_string(), k.to_string())]
                );
            }
        }
    }

    #[test]
    fn errors_csv_deterministic_by_default() {
        let recs = vec![ErrorRecordOut {
            seed: 1,
            n_modes: 16,
            m_steps: 256,
            sup_error: 0.125,
            runtime_s: 1.789,
        }];
        let mut a = Vec::new();
        let mut b = Vec::new();
        write_errors_csv(&recs, false, &mut a).unwrap();
        let mut recs2 = recs.clone();
        recs2[0].runtime_s = 9.999; // different measured runtime
        write_errors_csv(&recs2, false, &mut b).unwrap();
        assert_eq!(a, b);
        let text = String::from_utf8(a).unwrap();
        assert!(text.starts_with("seed,N,M,sup_error,runtime_s\n"));

        let mut c = Vec::new();
        write_errors_csv(&recs, true, &mut c).unwrap();
        let text = String::from_utf8(c).unwrap();
        let runtime_field = text.lines().nth(1).unwrap().split(',').nth(4).unwrap();
        assert_eq!(runtime_field.parse::<f64>().unwrap(), 1.789);
    }

    #[test]
    fn trajectory_binary_roundtrip() {
        use crate::harness::initial_condition;
        use crate::noise::OuPath;
        use crate::scheme::{simulate, Nonlinearity, SchemeConfig};
        use crate::spectral::Eigenbasis;

        let basis = Eigenbasis::<f64>::new(4);
        let ou = OuPath::zeros(4, 16, 1.0, &basis);
        let cfg = SchemeConfig::new(4, 16, 1.0, &Nonlinearity::Rational5);
        let xi = initial_condition(crate::harness::InitialData::TwoModeSine, &basis);
        let traj = simulate(&cfg, &Nonlinearity::Rational5, &xi, &ou, 50.0).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("traj.bin");
        save_trajectory_bin(&traj, &path).unwrap();
        let loaded = load_trajectory_bin(&path).unwrap();
        assert_eq!(loaded.n_modes, 4);
        assert_eq!(loaded.m_steps, 16);
        assert_eq!(loaded.noise_hash, traj.noise_hash());
        assert_eq!(loaded.times.len(), traj.states().len());
        for (idx, st) in traj.states().iter().enumerate() {
            for k in 0..4 {
                assert_eq!(loaded.coeffs[idx * 4 + k], st.coeffs()[k]);
            }
        }
    }

    #[test]
    fn hierarchy_binary_roundtrip() {
        let cov = assemble_covariance(&Kernel::triangular(0.3f64).unwrap(), 4, 64).unwrap();
        let f = Arc::new(factorize(&cov).unwrap());
        let h = sample_brownian(f, 10, 1.5, 99).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("noise.bin");
        save_hierarchy(&h, &path).unwrap();
        let loaded = load_hierarchy(&path).unwrap();
        assert_eq!(loaded.modes, 4);
        assert_eq!(loaded.steps, 10);
        assert_eq!(loaded.seed, 99);
        assert_eq!(loaded.t_final, 1.5);
        assert_eq!(loaded.sigma_hash, h.realization().factor().sigma_hash());
        assert_eq!(loaded.increments.data(), h.increments().data());
        // Sidecar exists and parses.
        let meta: HierarchyMeta =
            serde_json::from_reader(File::open(sidecar_path(&path)).unwrap()).unwrap();
        assert_eq!(meta.noise_hash, h.noise_hash());
    }
}
