use heom_core::bath::{decompose, BathDecomposition, DecomposeSettings, SpectralDensity};
use heom_core::integrator::{evolve, IntegrationConfig, Trajectory};
use heom_core::operators::{pauli, ComplexMatrix, SystemModel};
use heom_core::stochastic::{ensemble_mean, SdKernels};
use heom_core::validation::{decay_decomposition, decay_model, dephasing_model, spin_boson_model};

fn worst_z(sd: &Trajectory, heom: &Trajectory, obs: &str) -> f64 {
    let se = &sd.std_errors.as_ref().unwrap()[obs];
    sd.observable(obs)
        .unwrap()
        .iter()
        .zip(heom.observable(obs).unwrap())
        .zip(se)
        .map(|((a, b), s)| {
            let diff = (a - b).norm();
            if diff == 0.0 {
                0.0
            } else {
                diff / s
            }
        })
        .fold(0.0, f64::max)
}

fn cross_check(
    model: &SystemModel,
    decomp: &BathDecomposition,
    depth: u32,
    rho0: &ComplexMatrix,
    obs: (&str, ComplexMatrix),
    t_final: f64,
    n_traj: usize,
) -> Trajectory {
    let cfg = IntegrationConfig::new(1e-3, t_final, 100).with_observable(obs.0, obs.1);
    let fine = IntegrationConfig {
        dt: 5e-4,
        record_stride: 200,
        ..cfg.clone()
    };
    let heom = evolve(model, decomp, depth, rho0, &fine).unwrap();
    let sd = ensemble_mean(model, &SdKernels::from_decomposition(decomp), rho0, &cfg, n_traj, 99).unwrap();
    let z = worst_z(&sd, &heom, obs.0);
    assert!(z < 3.0, "stochastic mean deviates by {z:.2} SE");
    sd
}

#[test]
fn decay_general_scheme_agrees_with_heom() {
    let sd = cross_check(
        &decay_model(),
        &decay_decomposition().unwrap(),
        4,
        &pauli::excited_state(),
        ("rho_ee", pauli::excited_projector()),
        1.0,
        4000,
    );
    assert_eq!(sd.excluded, 0);
}

#[test]
fn dephasing_agrees_with_heom() {
    let d = decompose(
        &SpectralDensity::ohmic_drude(0.002, 5.0).unwrap(),
        0.015,
        DecomposeSettings::default(),
    )
    .unwrap();
    cross_check(
        &dephasing_model(),
        &d,
        4,
        &pauli::plus_state(),
        ("sigma_x", pauli::sigma_x()),
        1.0,
        2000,
    );
}

#[test]
fn ensemble_mean_is_hermitian_with_unit_trace() {
    let d = heom_core::validation::spin_boson_decomposition().unwrap();
    let cfg = IntegrationConfig::new(1e-3, 1.0, 100);
    let sd = ensemble_mean(
        &spin_boson_model(),
        &SdKernels::from_decomposition(&d),
        &pauli::plus_state(),
        &cfg,
        2000,
        7,
    )
    .unwrap();
    let se = sd.reduced_std_errors.as_ref().unwrap();
    for (k, rho) in sd.reduced.iter().enumerate() {
        for r in 0..2 {
            for c in 0..2 {
                let defect = (rho.get(r, c) - rho.get(c, r).conj()).norm();
                let bound = 3.0 * se[k].get(r, c).norm().hypot(se[k].get(c, r).norm()) + 1e-14;
                assert!(defect < bound, "hermiticity defect {defect} at sample {k}");
            }
        }
        let tr_se = se[k].get(0, 0).re.hypot(se[k].get(1, 1).re);
        let defect = sd.trace_defect[k];
        assert!(defect < 3.0 * tr_se + 1e-14, "trace defect {defect} at sample {k}");
    }
}
