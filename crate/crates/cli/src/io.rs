//! CSV and binary formats for spectra, summaries and noise series.

use std::io::{Read, Write};
use std::path::Path;

use natsim_core::noise::NoiseSeries;
use natsim_core::{NoiseSpec, Port, SpectrumResult};

use crate::error::{CliError, CliResult};

pub const SPECTRUM_HEADER: [&str; 2] = ["freq_GHz", "psd_photons_per_s_per_Hz"];
const SERIES_MAGIC: &[u8; 4] = b"NSER";
const SERIES_VERSION: u32 = 1;

pub fn fmt(x: f64) -> String {
    format!("{x:.12e}")
}

fn csv_err(path: &Path, e: csv::Error) -> CliError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => CliError::io(path, io),
        other => CliError::invalid(path.display().to_string(), format!("{other:?}")),
    }
}

pub fn write_spectrum_csv(path: &Path, spec: &SpectrumResult) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(SPECTRUM_HEADER).map_err(|e| csv_err(path, e))?;
    for (f, p) in spec.freq_grid.iter().zip(&spec.psd) {
        w.write_record([fmt(*f), fmt(*p)]).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Reads any two-column CSV with a header; the first column is GHz.
pub fn read_spectrum_csv(path: &Path) -> CliResult<SpectrumResult> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let (mut f, mut p) = (Vec::new(), Vec::new());
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let field = |k: usize| -> CliResult<f64> {
            rec.get(k)
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| CliError::invalid(format!("{}:row {}", path.display(), i + 2), "expected two numbers"))
        };
        f.push(field(0)?);
        p.push(field(1)?);
    }
    if f.len() < 2 {
        return Err(CliError::invalid(path.display().to_string(), "spectrum needs at least two rows"));
    }
    if !f.windows(2).all(|w| w[1] > w[0]) {
        return Err(CliError::invalid(path.display().to_string(), "frequencies must be strictly increasing"));
    }
    Ok(SpectrumResult {
        freq_grid: f,
        psd: p,
        port: Port::Resonator4,
        rayleigh_removed: true,
    })
}

pub fn write_series_csv(path: &Path, s: &NoiseSeries) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(["t_us", "xi_MHz"]).map_err(|e| csv_err(path, e))?;
    for (k, x) in s.samples.iter().enumerate() {
        w.write_record([fmt(k as f64 * s.dt), fmt(*x)]).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Series from CSV; the spec is not stored, so the caller supplies it.
pub fn read_series_csv(path: &Path, spec: NoiseSpec) -> CliResult<NoiseSeries> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let (mut t, mut x) = (Vec::new(), Vec::new());
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let get = |k: usize| rec.get(k).and_then(|s| s.trim().parse::<f64>().ok());
        match (get(0), get(1)) {
            (Some(a), Some(b)) => {
                t.push(a);
                x.push(b);
            }
            _ => return Err(CliError::invalid(path.display().to_string(), "expected t_us, xi_MHz")),
        }
    }
    if t.len() < 2 {
        return Err(CliError::invalid(path.display().to_string(), "series needs at least two samples"));
    }
    Ok(NoiseSeries {
        samples: x,
        dt: t[1] - t[0],
        spec,
    })
}

/// Little-endian: magic, version, JSON spec length + bytes, dt, n, samples.
pub fn write_series_bin(path: &Path, s: &NoiseSeries) -> CliResult<()> {
    let spec = serde_json::to_vec(&s.spec).map_err(|e| CliError::Numerical(e.to_string()))?;
    let mut buf = Vec::with_capacity(32 + spec.len() + 8 * s.samples.len());
    buf.extend_from_slice(SERIES_MAGIC);
    buf.extend_from_slice(&SERIES_VERSION.to_le_bytes());
    buf.extend_from_slice(&(spec.len() as u64).to_le_bytes());
    buf.extend_from_slice(&spec);
    buf.extend_from_slice(&s.dt.to_le_bytes());
    buf.extend_from_slice(&(s.samples.len() as u64).to_le_bytes());
    for x in &s.samples {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    let mut f = std::fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    f.write_all(&buf).map_err(|e| CliError::io(path, e))
}

pub fn read_series_bin(path: &Path) -> CliResult<NoiseSeries> {
    let mut buf = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| CliError::io(path, e))?;
    let bad = |why: &str| CliError::invalid(path.display().to_string(), why.to_string());
    let mut pos = 0usize;
    let mut take = |n: usize| -> CliResult<&[u8]> {
        let s = buf.get(pos..pos + n).ok_or_else(|| bad("truncated file"))?;
        pos += n;
        Ok(s)
    };
    if take(4)? != SERIES_MAGIC {
        return Err(bad("not a noise series file"));
    }
    let version = u32::from_le_bytes(take(4)?.try_into().unwrap());
    if version != SERIES_VERSION {
        return Err(bad("unsupported version"));
    }
    let spec_len = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
    let spec: NoiseSpec = serde_json::from_slice(take(spec_len)?).map_err(|e| bad(&e.to_string()))?;
    let dt = f64::from_le_bytes(take(8)?.try_into().unwrap());
    let n = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
    let mut samples = Vec::with_capacity(n.min(1 << 28));
    for _ in 0..n {
        samples.push(f64::from_le_bytes(take(8)?.try_into().unwrap()));
    }
    Ok(NoiseSeries { samples, dt, spec })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn binary_series_is_lossless(xs in proptest::collection::vec(-1e3f64..1e3, 1..200), dt in 1e-5f64..1e-2, seed in any::<u64>()) {
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("s.bin");
            let s = NoiseSeries { samples: xs, dt, spec: NoiseSpec::lorentzian(1.0, 190.0, 10.0).with_seed(seed) };
            write_series_bin(&p, &s).unwrap();
            prop_assert_eq!(read_series_bin(&p).unwrap(), s);
        }

        #[test]
        fn spectrum_csv_keeps_twelve_digits(ps in proptest::collection::vec(0.0f64..1e3, 2..100)) {
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("s.csv");
            let s = SpectrumResult {
                freq_grid: (0..ps.len()).map(|i| 6.0 + i as f64 * 1e-3).collect(),
                psd: ps,
                port: Port::Resonator4,
                rayleigh_removed: true,
            };
            write_spectrum_csv(&p, &s).unwrap();
            let back = read_spectrum_csv(&p).unwrap();
            for (a, b) in back.psd.iter().zip(&s.psd) {
                prop_assert!((a - b).abs() <= 1e-11 * b.abs().max(1e-300));
            }
        }
    }

    #[test]
    fn truncated_binary_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.bin");
        let s = NoiseSeries { samples: vec![1.0; 10], dt: 1e-3, spec: NoiseSpec::white(1.0) };
        write_series_bin(&p, &s).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(read_series_bin(&p), Err(CliError::Validation { .. })));
    }
}
