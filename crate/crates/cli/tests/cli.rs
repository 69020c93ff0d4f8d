use std::path::{Path, PathBuf};
use std::process::Command;

use natsim_cli::{execute, write_bundle, CliError, Scenario};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_natsim"))
}

fn scenarios_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios")
}

const SMALL: &str = r#"
name = "small"
engine = "lindblad"
resonator_dim = 2
outputs = ["powers", "efficiency", "spectra", "fits"]
[noise]
kind = "white"
amplitude_MHz = 0.0
[sweep]
variable = "noise_amplitude_MHz"
grid = [0.0, 20.0, 60.0]
"#;

const STOCH: &str = r#"
name = "stoch"
engine = "stochastic"
resonator_dim = 2
seed = 9
outputs = ["powers", "spectra"]
[noise]
kind = "lorentzian"
amplitude_MHz = 7.2
center_MHz = 188.1
fwhm_MHz = 10.0
[sweep]
variable = "xi0_MHz"
grid = [4.0, 8.0]
[stochastic]
n_traj = 3
relax_us = 0.05
tau_span_us = 0.1
"#;

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn read(p: impl AsRef<Path>) -> Vec<u8> {
    std::fs::read(p).unwrap()
}

#[test]
fn bundled_scenarios_validate() {
    let mut n = 0;
    for e in std::fs::read_dir(scenarios_dir()).unwrap() {
        let p = e.unwrap().path();
        let s = Scenario::load(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
        assert_eq!(p.file_stem().unwrap().to_str().unwrap(), s.name);
        n += 1;
    }
    assert_eq!(n, 9);
}

#[test]
fn empty_grid_exits_2_and_names_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.toml", &SMALL.replace("[0.0, 20.0, 60.0]", "[]"));
    let out = bin().arg("run").arg(&cfg).arg("--out").arg(dir.path().join("o")).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("sweep.grid"));
    assert!(matches!(Scenario::load(&cfg), Err(CliError::Validation { field, .. }) if field == "sweep.grid"));
}

#[test]
fn missing_file_and_bad_verb() {
    assert_eq!(bin().args(["run", "/nonexistent.toml"]).status().unwrap().code(), Some(2));
    assert_eq!(bin().arg("frobnicate").status().unwrap().code(), Some(2));
}

#[test]
fn reruns_are_byte_identical_and_manifest_reproduces() {
    let dir = tempfile::tempdir().unwrap();
    for (name, text) in [("small.toml", SMALL), ("stoch.toml", STOCH)] {
        let cfg = write(dir.path(), name, text);
        let a = dir.path().join(format!("{name}.a"));
        let b = dir.path().join(format!("{name}.b"));
        let c = dir.path().join(format!("{name}.c"));
        for o in [&a, &b] {
            let st = bin().arg("run").arg(&cfg).arg("--out").arg(o).output().unwrap();
            assert!(st.status.success(), "{}", String::from_utf8_lossy(&st.stderr));
        }
        let st = bin().arg("run").arg(a.join("manifest.json")).arg("--out").arg(&c).output().unwrap();
        assert!(st.status.success(), "{}", String::from_utf8_lossy(&st.stderr));
        for f in ["summary.csv", "spectra/point_001_S4.csv", "spectra/point_000_S2.csv"] {
            assert_eq!(read(a.join(f)), read(b.join(f)), "{name} {f}");
            assert_eq!(read(a.join(f)), read(c.join(f)), "{name} {f} from manifest");
        }
    }
}

#[test]
fn bundle_contents() {
    let dir = tempfile::tempdir().unwrap();
    let s = Scenario::from_toml_str(SMALL).unwrap();
    let run = execute(&s).unwrap();
    let files = write_bundle(&run, dir.path()).unwrap();
    for f in &files {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let spec = String::from_utf8(read(dir.path().join("spectra/point_000_S4.csv"))).unwrap();
    assert!(spec.starts_with("freq_GHz,psd_photons_per_s_per_Hz\n"));
    let fits = String::from_utf8(read(dir.path().join("fits.csv"))).unwrap();
    assert!(fits.lines().count() > 1);
    let m: serde_json::Value = serde_json::from_slice(&read(dir.path().join("manifest.json"))).unwrap();
    assert_eq!(m["scenario"]["name"], "small");
    assert_eq!(m["seeds"].as_array().unwrap().len(), 3);
    assert!(m["wall_time_s"].as_f64().unwrap() >= 0.0);
}

#[test]
fn compare_verb() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "c.toml",
        "name = \"c\"\nengine = \"lindblad\"\nresonator_dim = 2\n[sweep]\nvariable = \"gamma_phi_b_MHz\"\ngrid = [0.0, 10.0, 20.0, 30.0, 45.0, 60.0]\n[stochastic]\ntau_span_us = 1.0\n",
    );
    let out = bin().arg("compare").arg(&cfg).output().unwrap();
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(text.contains("eta argmax lindblad vs rate_eq"), "{text}");
    assert!(!text.contains("FLAG"), "{text}");
}

#[test]
fn noise_gen_and_fit_verbs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "n.toml",
        "method = \"wiener\"\nduration_us = 20.0\nseed = 4\n[noise]\nkind = \"lorentzian\"\namplitude_MHz = 2.0\ncenter_MHz = 100.0\nfwhm_MHz = 10.0\n",
    );
    let bin_out = dir.path().join("n.bin");
    assert!(bin().arg("noise-gen").arg(&cfg).arg(&bin_out).status().unwrap().success());
    let s = natsim_cli::io::read_series_bin(&bin_out).unwrap();
    assert_eq!(s.len(), 50_000);
    let fir = write(dir.path(), "f.toml", "duration_us = 20.0\n[noise]\nkind = \"white\"\namplitude_MHz = 1.0\n");
    assert!(bin().arg("noise-gen").arg(&fir).arg(dir.path().join("f.csv")).status().unwrap().success());
    let nyq = write(dir.path(), "q.toml", "duration_us = 20.0\nsample_rate_MHz = 500.0\n[noise]\nkind = \"white\"\namplitude_MHz = 1.0\n");
    assert_eq!(bin().arg("noise-gen").arg(&nyq).arg(dir.path().join("q.csv")).status().unwrap().code(), Some(2));

    // Lorentzian line at 6.2 GHz, 10 MHz wide
    let mut csv = String::from("freq_GHz,psd\n");
    for k in 0..400 {
        let f = 6.1 + k as f64 * 5e-4;
        let x = (f - 6.2) * 1000.0 / 5.0;
        csv.push_str(&format!("{f},{}\n", 1.0 / (1.0 + x * x)));
    }
    let spec = write(dir.path(), "s.csv", &csv);
    let out = bin().arg("fit").arg(&spec).arg("lorentzian").output().unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("nu01_GHz"));

    let zero: String = std::iter::once("freq_GHz,psd\n".to_string())
        .chain((0..64).map(|k| format!("{},0\n", 6.0 + k as f64 * 1e-3)))
        .collect();
    let z = write(dir.path(), "z.csv", &zero);
    assert_eq!(bin().arg("fit").arg(&z).arg("mollow").status().unwrap().code(), Some(3));
}

#[test]
fn workers_env_is_validated() {
    let out = bin().env("NATSIM_WORKERS", "zero").args(["run", "x.toml"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("NATSIM_WORKERS"));
}
