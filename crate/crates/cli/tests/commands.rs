use std::path::Path;
use std::process::Command;

use heom_cli::commands::{cmd_bcf, cmd_converge, cmd_run, cmd_stochastic, cmd_validate, render_validation, Overrides};
use heom_cli::parse_config;

const DEPHASING: &str = r#"
[model]
kind = "pure_dephasing"
params = { omega_0 = 1.0 }

[bath]
kind = "ohmic_drude"
params = { chi = 0.002, omega_c = 5.0 }
beta = 0.015

[hierarchy]
depth = 4

[integrator]
dt = 5e-4
t_final = 2.0
record_stride = 200

[stochastic]
n_traj = 5000
seed = 3
"#;

const SPIN_BOSON: &str = r#"
[model]
kind = "spin_boson"
params = { delta = 0.5 }

[bath]
kind = "lorentz"
params = { gamma = 0.5, lambda = 0.25, omega_0 = 0.5 }
beta = "inf"

[hierarchy]
depth = 4

[integrator]
t_final = 1.0
record_stride = 100

[stochastic]
n_traj = 2
seed = 11
"#;

fn to(path: &Path) -> Overrides {
    Overrides {
        output: Some(path.to_path_buf()),
        ..Overrides::default()
    }
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<f64>>) {
    let text = std::fs::read_to_string(path).unwrap();
    assert!(!text.contains('\r'));
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(str::to_string).collect();
    let rows = lines
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    (header, rows)
}

fn heom() -> Command {
    Command::new(env!("CARGO_BIN_EXE_heom"))
}

#[test]
fn run_writes_expected_columns() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("deph.csv");
    let spec = parse_config(DEPHASING).unwrap();
    cmd_run(&spec, &to(&out)).unwrap();
    let (header, rows) = read_csv(&out);
    assert_eq!(header, ["t", "sigma_x_re", "trace_defect", "herm_defect"]);
    assert_eq!(rows.len(), 21);
    assert_eq!(rows[0][1], 1.0000000000000002);
    let text = std::fs::read_to_string(&out).unwrap();
    let first = text.lines().nth(2).unwrap().split(',').nth(1).unwrap();
    let mantissa = first.split('e').next().unwrap();
    assert!(mantissa.chars().filter(char::is_ascii_digit).count() >= 16);
}

#[test]
fn complex_observables_get_two_columns() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sb.csv");
    let text = format!("{SPIN_BOSON}\n[output]\nobservables = [\"rho_eg\", \"sigma_y\"]\n");
    cmd_run(&parse_config(&text).unwrap(), &to(&out)).unwrap();
    let (header, rows) = read_csv(&out);
    assert_eq!(header, ["t", "rho_eg_re", "rho_eg_im", "sigma_y_re"]);
    for r in rows {
        // ⟨σ_y⟩ = -2 Im ρ_eg with σ_y = [[0, -i], [i, 0]] in the {e, g} basis.
        assert!((r[3] + 2.0 * r[2]).abs() < 1e-12);
    }
}

#[test]
fn invalid_spec_exits_nonzero_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    let out = dir.path().join("bad.csv");
    std::fs::write(&cfg, SPIN_BOSON.replace("delta", "detuning")).unwrap();
    let status = heom()
        .args(["run", cfg.to_str().unwrap(), "--output", out.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(!status.status.success());
    assert!(String::from_utf8_lossy(&status.stderr).contains("model.params.detuning"));
    assert!(!out.exists());
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
}

#[test]
fn memory_budget_env_var_is_honoured() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("sb.toml");
    let out = dir.path().join("sb.csv");
    std::fs::write(&cfg, SPIN_BOSON).unwrap();
    let status = heom()
        .env("HEOM_MEM_BUDGET", "100")
        .args(["run", cfg.to_str().unwrap(), "--output", out.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(!status.status.success());
    assert!(String::from_utf8_lossy(&status.stderr).contains("memory budget"));
    assert!(!out.exists());
}

#[test]
fn output_is_independent_of_thread_count() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("sb.toml");
    std::fs::write(&cfg, SPIN_BOSON.replace("depth = 4", "depth = 16")).unwrap();
    let mut outputs = Vec::new();
    for threads in ["1", "3"] {
        let out = dir.path().join(format!("sb{threads}.csv"));
        let status = heom()
            .args([
                "run",
                cfg.to_str().unwrap(),
                "--threads",
                threads,
                "--output",
                out.to_str().unwrap(),
            ])
            .status()
            .unwrap();
        assert!(status.success());
        outputs.push(std::fs::read(out).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn converge_with_empty_bath_picks_first_depth() {
    let text = SPIN_BOSON
        .replace(
            "kind = \"lorentz\"\nparams = { gamma = 0.5, lambda = 0.25, omega_0 = 0.5 }\nbeta = \"inf\"",
            "kind = \"none\"",
        )
        .replace("depth = 4", "depth_schedule = [2, 4]");
    let summary = cmd_converge(&parse_config(&text).unwrap(), &Overrides::default()).unwrap();
    assert!(summary.converged);
    assert_eq!(summary.chosen_depth, Some(2));
    assert_eq!(summary.pairwise_max_diffs, vec![0.0]);
}

#[test]
fn decay_schedule_converges() {
    let path = format!("{}/../../configs/decay.toml", env!("CARGO_MANIFEST_DIR"));
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("decay.csv");
    let spec = parse_config(&std::fs::read_to_string(path).unwrap()).unwrap();
    let summary = cmd_converge(&spec, &to(&out)).unwrap();
    assert!(summary.converged);
    let k = summary
        .schedule
        .iter()
        .position(|&d| Some(d) == summary.chosen_depth)
        .unwrap();
    assert!(summary.pairwise_max_diffs[k] < spec.tol);
    let (header, _) = read_csv(&out);
    assert_eq!(
        header,
        [
            "t",
            "rho_ee_re",
            "rho_eg_re",
            "rho_eg_im",
            "trace_defect",
            "herm_defect"
        ]
    );
}

#[test]
fn unconverged_schedule_exits_nonzero_with_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("sb.toml");
    let text = SPIN_BOSON.replace("depth = 4", "depth_schedule = [1, 2]\ntol = 1e-12");
    std::fs::write(&cfg, text).unwrap();
    let out = heom().args(["converge", cfg.to_str().unwrap()]).output().unwrap();
    assert!(!out.status.success());
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["converged"], false);
    assert_eq!(report["chosen_depth"], serde_json::Value::Null);
    assert_eq!(report["pairwise_max_diffs"].as_array().unwrap().len(), 1);
}

#[test]
fn bcf_lorentz_error_vanishes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bcf.csv");
    let summary = cmd_bcf(&parse_config(SPIN_BOSON).unwrap(), &to(&out)).unwrap();
    assert!(summary.max_abs_error < 1e-12);
    let (header, rows) = read_csv(&out);
    assert_eq!(header.last().unwrap(), "xi_abs_error");
    assert!(rows.iter().all(|r| r[5] < 1e-12));
    assert_eq!(rows[0][0], 0.0);
}

#[test]
fn bcf_drude_error_non_increasing_in_terms() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bcf.csv");
    let mut errors = Vec::new();
    for eps in 0..=2 {
        let text = DEPHASING.replace(
            "[integrator]\ndt = 5e-4\nt_final = 2.0\nrecord_stride = 200",
            &format!("[decomposition]\nmatsubara_terms = {eps}\n\n[integrator]\ndt = 0.002\nt_final = 0.04\nrecord_stride = 1"),
        );
        errors.push(cmd_bcf(&parse_config(&text).unwrap(), &to(&out)).unwrap().max_abs_error);
    }
    assert!(
        errors.windows(2).all(|w| w[1] <= w[0] + heom_core::bath::QUAD_TOL),
        "{errors:?}"
    );
}

#[test]
fn bcf_drude_zero_temperature_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("d.toml");
    std::fs::write(&cfg, DEPHASING.replace("beta = 0.015", "beta = \"inf\"")).unwrap();
    let out = heom()
        .args([
            "bcf",
            cfg.to_str().unwrap(),
            "--output",
            dir.path().join("b.csv").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("unsupported"));
}

#[test]
fn stochastic_is_bitwise_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let spec = parse_config(SPIN_BOSON).unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    cmd_stochastic(&spec, &to(&a)).unwrap();
    cmd_stochastic(&spec, &to(&b)).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let (header, _) = read_csv(&a);
    assert_eq!(
        header,
        [
            "t",
            "sigma_z_re",
            "sigma_z_se",
            "trace_defect",
            "herm_defect",
            "excluded"
        ]
    );
    let c = dir.path().join("c.csv");
    cmd_stochastic(
        &spec,
        &Overrides {
            seed: Some(12),
            ..to(&c)
        },
    )
    .unwrap();
    assert_ne!(std::fs::read(&a).unwrap(), std::fs::read(&c).unwrap());
}

#[test]
fn stochastic_dephasing_agrees_with_run() {
    let dir = tempfile::tempdir().unwrap();
    let spec = parse_config(DEPHASING).unwrap();
    let det = dir.path().join("det.csv");
    let sto = dir.path().join("sto.csv");
    cmd_run(&spec, &to(&det)).unwrap();
    cmd_stochastic(&spec, &to(&sto)).unwrap();
    let (_, d) = read_csv(&det);
    let (_, s) = read_csv(&sto);
    assert_eq!(d.len(), s.len());
    for (dr, sr) in d.iter().zip(&s) {
        let diff = (dr[1] - sr[1]).abs();
        assert!(
            diff == 0.0 || diff < 3.0 * sr[2],
            "t = {}: diff {diff}, se {}",
            dr[0],
            sr[2]
        );
    }
}

#[test]
fn stochastic_without_section_names_it() {
    let text = SPIN_BOSON.replace("[stochastic]\nn_traj = 2\nseed = 11\n", "");
    let dir = tempfile::tempdir().unwrap();
    let err = cmd_stochastic(&parse_config(&text).unwrap(), &to(&dir.path().join("x.csv"))).unwrap_err();
    assert_eq!(err.field(), Some("stochastic"));
}

#[test]
fn validate_passes_and_is_deterministic() {
    let first = cmd_validate();
    let second = cmd_validate();
    assert_eq!(first.len(), 9);
    assert!(first.iter().all(|r| r.passed), "{}", render_validation(&first));
    assert_eq!(render_validation(&first), render_validation(&second));
}
