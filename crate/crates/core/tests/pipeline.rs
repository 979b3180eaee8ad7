use softqec::code_model::{compute_detectors, Basis, CodeSpec, LogicalState};
use softqec::decoding_graph::build_graph;
use softqec::matching_decoder::{decode_defects, extract_defects};
use softqec::measurement_model::{Covariance, IQPoint, LeakageModel, ReadoutModel, StateDensity};
use softqec::noise_model::{derive_edge_probabilities, NoiseParams};
use softqec::sampler::{fault_signature, fault_sites, sample_shot, shot_seed, DecoderMode, Experiment, FaultSite};

fn desk_noise() -> NoiseParams {
    NoiseParams {
        p_cx: 0.05,
        p_h: 0.003,
        p_s_mean: 0.01,
        ..NoiseParams::noiseless()
    }
}

fn separated() -> ReadoutModel {
    let cov = Covariance::isotropic(0.1);
    ReadoutModel::equal_priors(
        StateDensity::gaussian(IQPoint::new(-10.0, 0.0), cov).unwrap(),
        StateDensity::gaussian(IQPoint::new(10.0, 0.0), cov).unwrap(),
    )
    .unwrap()
}

#[test]
fn readout_only_syndromes_are_sums_of_soft_patterns() {
    let spec = CodeSpec::new(5, 6, Basis::X, LogicalState::Minus).unwrap();
    let noise = NoiseParams {
        p_s_mean: 0.08,
        ..NoiseParams::noiseless()
    };
    let model = ReadoutModel::symmetric_gaussian(0.08, 1.0).unwrap();
    let m = spec.ancillas();
    for s in 0..200 {
        let shot = sample_shot(&spec, &noise, &model, shot_seed(3, s)).unwrap();
        let mut expected = vec![0u8; spec.detector_count()];
        let mut toggle = |site| {
            for e in fault_signature(&spec, site).unwrap().0 {
                expected[e] ^= 1;
            }
        };
        for t in 0..spec.rounds {
            for a in 0..m {
                if shot.outcome.raw_ancilla.get(t, a) != shot.true_outcome.raw_ancilla.get(t, a) {
                    toggle(FaultSite::SoftStabilizer { ancilla: a, round: t });
                }
            }
        }
        for q in 0..spec.distance {
            if shot.outcome.final_data[q] != shot.true_outcome.final_data[q] {
                toggle(FaultSite::SoftCode { qubit: q });
            }
        }
        let syn = compute_detectors(&shot.outcome, &spec).unwrap();
        assert_eq!(syn.detectors.as_slice(), expected.as_slice(), "shot {s}");
    }
}

#[test]
fn truth_matches_frame_when_readout_is_perfect() {
    let spec = CodeSpec::z_plus(7, 5).unwrap();
    let model = separated();
    let mut flips = 0;
    for s in 0..500 {
        let shot = sample_shot(&spec, &desk_noise(), &model, shot_seed(8, s)).unwrap();
        assert_eq!(shot.outcome, shot.true_outcome);
        assert_eq!(shot.truth_logical_flip, shot.frame_logical_flip(&spec));
        flips += usize::from(shot.truth_logical_flip);
    }
    assert!(flips > 0, "noise should flip the logical qubit in some shots");
}

#[test]
fn every_single_fault_is_corrected() {
    for (d, t) in [(3, 2), (5, 3), (5, 4)] {
        for state in [LogicalState::Plus, LogicalState::Minus] {
            let spec = CodeSpec::new(d, t, Basis::Z, state).unwrap();
            let noise = NoiseParams {
                p_1q: 0.001,
                idle_us: 0.5,
                t1_us: 30.0,
                t2_us: 30.0,
                ..desk_noise()
            };
            let graph = build_graph(&spec, &derive_edge_probabilities(&spec, &noise).unwrap()).unwrap();
            let weights = graph.static_weights();
            for (site, p) in fault_sites(&spec, &noise).unwrap() {
                if p == 0.0 {
                    continue;
                }
                let rec = softqec::sampler::inject_fault(&spec, site);
                let defects = extract_defects(&compute_detectors(&rec, &spec).unwrap(), &graph).unwrap();
                let m = decode_defects(&graph, &weights, &defects).unwrap();
                assert_eq!(
                    m.logical_flip,
                    rec.observed_logical_flip(&spec) == 1,
                    "d={d} T={t} {state:?} {site:?}"
                );
            }
        }
    }
}

#[test]
fn leakage_run_orders_the_decoders() {
    let leak = StateDensity::gaussian(IQPoint::new(0.0, 6.0), Covariance::isotropic(1.0)).unwrap();
    let model = ReadoutModel::symmetric_gaussian(0.01, 1.0)
        .unwrap()
        .with_leakage(LeakageModel {
            density: leak,
            outlier_fraction: 0.01,
        })
        .unwrap();
    let exp = Experiment {
        spec: CodeSpec::z_plus(5, 10).unwrap(),
        // calibration predates the run and misses most of the readout error
        noise: NoiseParams {
            p_leak: 0.01,
            p_s_mean: 0.002,
            ..desk_noise()
        },
        model,
        shots: 100_000,
        seed: 21,
        modes: DecoderMode::ALL.to_vec(),
        sub_distances: vec![],
    };
    let r = exp.run().unwrap();
    let f = |m| r.pooled(m, 5).0 as f64;
    let (cal, di, soft) = (f(DecoderMode::HardCalibrated), f(DecoderMode::HardDataInformed), f(DecoderMode::Soft));
    eprintln!("calibrated {cal} data-informed {di} soft {soft}; mean p_soft {}", r.mean_p_soft);
    // the three decoders see the same shots, so the spread is far below sqrt(N)
    assert!(soft < di, "soft {soft} vs data-informed {di}");
    assert!(di <= cal, "data-informed {di} vs calibrated {cal}");
    assert!(r.leak_flags > 0);
}
