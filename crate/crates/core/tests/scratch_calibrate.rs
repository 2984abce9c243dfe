//! Scratch calibration harness (temporary).

use pcclean_core::data::{contaminate, generate_shape, ContaminationSpec, Shape, ShapeKind, SurfaceRef};
use pcclean_core::detector::{build_detector_dataset, classify_outliers, train_detector, PatchParams};
use pcclean_core::eval::aupr;
use pcclean_core::network::{GraphConvVariant, ModelConfig, ModelKind};
use pcclean_core::train::TrainHyper;
use std::time::Instant;

#[test]
#[ignore]
fn calibrate_detector() {
    let k = 16;
    let n_points = 2000;
    let pp = PatchParams {
        radius_fraction: 0.08,
        size: 64,
        seed: 100,
    };
    let spec_for = |seed: u64| ContaminationSpec {
        noise_level: 0.01,
        outlier_fraction: 0.3,
        outlier_min_distance: 0.015,
        seed,
    };

    let t0 = Instant::now();
    let train_kinds = [ShapeKind::Sphere, ShapeKind::Cube, ShapeKind::Torus];
    let mut train_clouds = Vec::new();
    for (i, kind) in train_kinds.iter().enumerate() {
        let clean = generate_shape(*kind, n_points, 200 + i as u64).unwrap();
        let shape = Shape::new(*kind);
        let paired = contaminate(&clean, SurfaceRef::Analytic(&shape), &spec_for(300 + i as u64)).unwrap();
        train_clouds.push(paired.contaminated);
    }
    println!("data generation: {:?}", t0.elapsed());

    let t1 = Instant::now();
    let samples = build_detector_dataset(&train_clouds, &pp, k, Some(400)).unwrap();
    println!("dataset: {} samples in {:?}", samples.len(), t1.elapsed());
    let pos = samples.iter().filter(|s| s.label).count();
    println!("positives: {pos}/{}", samples.len());

    let cfg = ModelConfig::small(ModelKind::Detector, GraphConvVariant::Dynamic, k);
    for lr in [1e-4, 1e-3, 1e-2] {
        let t2 = Instant::now();
        let hyper = TrainHyper {
            batch_size: 16,
            lr,
            epochs: 10,
            seed: 7,
        };
        let (params, report) = train_detector(&samples, &cfg, &hyper, InitScheme::paper_default(ModelKind::Detector)).unwrap();
        println!(
            "lr {lr}: 10 epochs in {:?}; losses {:?}",
            t2.elapsed(),
            report
                .epoch_losses
                .iter()
                .map(|(_, l)| (l * 1000.0).round() / 1000.0)
                .collect::<Vec<_>>()
        );

        // held-out icosahedron
        let clean = generate_shape(ShapeKind::Icosahedron, n_points, 999).unwrap();
        let shape = Shape::new(ShapeKind::Icosahedron);
        let paired = contaminate(&clean, SurfaceRef::Analytic(&shape), &spec_for(888)).unwrap();
        let t3 = Instant::now();
        let decision = classify_outliers(&paired.contaminated, &cfg, &params, &pp, 0.5).unwrap();
        let labels = paired.contaminated.labels().unwrap();
        let score = aupr(&decision.probabilities, labels).unwrap();
        println!(
            "lr {lr}: held-out AUPR = {score:.4} (inference {:?})",
            t3.elapsed()
        );
    }
}

use pcclean_core::denoiser::{apply_denoise, build_denoiser_dataset, train_denoiser};
use pcclean_core::eval::chamfer_distance;
use pcclean_core::network::{InitScheme, WeightInit};

#[test]
#[ignore]
fn calibrate_denoiser() {
    let k = 16;
    let n_points = 2000;
    let pp = PatchParams {
        radius_fraction: 0.08,
        size: 64,
        seed: 500,
    };
    let spec_for = |seed: u64| ContaminationSpec {
        noise_level: 0.01,
        outlier_fraction: 0.0,
        outlier_min_distance: 0.015,
        seed,
    };
    let train_kinds = [ShapeKind::Sphere, ShapeKind::Cube, ShapeKind::Torus];
    let mut paired_list = Vec::new();
    for (i, kind) in train_kinds.iter().enumerate() {
        let clean = generate_shape(*kind, n_points, 600 + i as u64).unwrap();
        let shape = Shape::new(*kind);
        paired_list.push(
            contaminate(&clean, SurfaceRef::Analytic(&shape), &spec_for(700 + i as u64)).unwrap(),
        );
    }
    let samples = build_denoiser_dataset(&paired_list, &pp, k, 100, Some(400)).unwrap();
    println!("samples: {}", samples.len());

    let clean_holdout = generate_shape(ShapeKind::Icosahedron, n_points, 901).unwrap();
    let shape = Shape::new(ShapeKind::Icosahedron);
    let noisy_holdout =
        contaminate(&clean_holdout, SurfaceRef::Analytic(&shape), &spec_for(902)).unwrap();
    let noisy = noisy_holdout.contaminated.clone();
    let cd_before = chamfer_distance(&noisy, &clean_holdout).unwrap();
    println!("CD(noisy, clean) = {cd_before:.6e}");

    let cfg = ModelConfig::small(ModelKind::Denoiser, GraphConvVariant::Dynamic, k);
    let desk = InitScheme::desk_default(ModelKind::Denoiser);
    let paper = InitScheme::paper_default(ModelKind::Denoiser);
    let _ = WeightInit::He;
    let _ = paper;
    for (name, init, lr) in [
        ("desk lr 3e-1", desk, 3e-1),
        ("desk lr 1e0", desk, 1e0),
        ("desk lr 3e0", desk, 3e0),
    ] {
        let hyper = TrainHyper { batch_size: 16, lr, epochs: 30, seed: 42 };
        let t = Instant::now();
        let (params, report) = train_denoiser(&samples, &cfg, &hyper, 0.99, init).unwrap();
        let losses: Vec<f64> = report.epoch_losses.iter().map(|(_, l)| *l).collect();
        let denoised = apply_denoise(&noisy, &cfg, &params, &pp).unwrap();
        let cd_after = chamfer_distance(&denoised, &clean_holdout).unwrap();
        println!(
            "{name}: {:?}; first/last loss {:.3e}/{:.3e}; CD after {cd_after:.6e} ({}% change)",
            t.elapsed(),
            losses.first().unwrap(),
            losses.last().unwrap(),
            ((cd_after / cd_before - 1.0) * 100.0).round()
        );
    }
}

use pcclean_core::detector::remove_outliers;

#[test]
#[ignore]
fn calibrate_end_to_end() {
    let k = 16;
    let n_points = 2000;
    let pp = PatchParams { radius_fraction: 0.08, size: 64, seed: 42 };
    let spec2 = |seed: u64| ContaminationSpec {
        noise_level: 0.02,
        outlier_fraction: 0.3,
        outlier_min_distance: 0.015,
        seed,
    };

    // detector trained at the end-to-end noise level on the other shapes
    let train_kinds = [ShapeKind::Sphere, ShapeKind::Cube, ShapeKind::Torus];
    let mut train_clouds = Vec::new();
    for (i, kind) in train_kinds.iter().enumerate() {
        let clean = generate_shape(*kind, n_points, 20 + i as u64).unwrap();
        let shape = Shape::new(*kind);
        train_clouds.push(
            contaminate(&clean, SurfaceRef::Analytic(&shape), &spec2(30 + i as u64))
                .unwrap()
                .contaminated,
        );
    }
    let det_samples = build_detector_dataset(&train_clouds, &pp, k, Some(400)).unwrap();
    let det_cfg = ModelConfig::small(ModelKind::Detector, GraphConvVariant::Dynamic, k);
    let hyper = TrainHyper { batch_size: 16, lr: 1e-3, epochs: 12, seed: 3 };
    let t = Instant::now();
    let (det_params, _) = train_detector(&det_samples, &det_cfg, &hyper, InitScheme::paper_default(ModelKind::Detector)).unwrap();
    println!("detector trained in {:?}", t.elapsed());

    // denoiser trained at 1% noise, no outliers (as in the denoising fixture)
    let spec_noise = |seed: u64| ContaminationSpec {
        noise_level: 0.01,
        outlier_fraction: 0.0,
        outlier_min_distance: 0.015,
        seed,
    };
    let mut paired_list = Vec::new();
    for (i, kind) in train_kinds.iter().enumerate() {
        let clean = generate_shape(*kind, n_points, 40 + i as u64).unwrap();
        let shape = Shape::new(*kind);
        paired_list.push(
            contaminate(&clean, SurfaceRef::Analytic(&shape), &spec_noise(50 + i as u64)).unwrap(),
        );
    }
    let den_samples = build_denoiser_dataset(&paired_list, &pp, k, 100, Some(400)).unwrap();
    let den_cfg = ModelConfig::small(ModelKind::Denoiser, GraphConvVariant::Dynamic, k);
    let den_hyper = TrainHyper { batch_size: 16, lr: 3.0, epochs: 30, seed: 4 };
    let t = Instant::now();
    let (den_params, _) = train_denoiser(
        &den_samples, &den_cfg, &den_hyper, 0.99,
        InitScheme::desk_default(ModelKind::Denoiser),
    ).unwrap();
    println!("denoiser trained in {:?}", t.elapsed());

    // contaminated icosahedron fixture
    let clean = generate_shape(ShapeKind::Icosahedron, n_points, 60).unwrap();
    let shape = Shape::new(ShapeKind::Icosahedron);
    let paired = contaminate(&clean, SurfaceRef::Analytic(&shape), &spec2(70)).unwrap();
    let contaminated = paired.contaminated.clone();
    let labels = contaminated.labels().unwrap().to_vec();

    let decision = classify_outliers(&contaminated, &det_cfg, &det_params, &pp, 0.5).unwrap();
    let injected = labels.iter().filter(|&&o| o).count();
    let caught = labels.iter().zip(&decision.is_outlier).filter(|(&l, &f)| l && f).count();
    let clean_removed = labels.iter().zip(&decision.is_outlier).filter(|(&l, &f)| !l && f).count();
    let clean_total = labels.len() - injected;
    println!(
        "outlier recall {:.3} ({caught}/{injected}); clean removed {:.3} ({clean_removed}/{clean_total})",
        caught as f64 / injected as f64,
        clean_removed as f64 / clean_total as f64
    );

    let kept = remove_outliers(&contaminated, &decision).unwrap();
    let denoised = apply_denoise(&kept, &den_cfg, &den_params, &pp).unwrap();
    let cd_contaminated = chamfer_distance(&contaminated, &clean).unwrap();
    let cd_after_removal = chamfer_distance(&kept, &clean).unwrap();
    let cd_final = chamfer_distance(&denoised, &clean).unwrap();
    println!("CD contaminated {cd_contaminated:.6e} -> removal {cd_after_removal:.6e} -> denoised {cd_final:.6e}");
}

#[test]
#[ignore]
fn calibrate_transfer() {
    let k = 16;
    let n_points = 2000;
    let pp = PatchParams { radius_fraction: 0.08, size: 64, seed: 42 };
    // train at 1% noise (the recipe that is known to learn)
    let spec1 = |seed: u64| ContaminationSpec {
        noise_level: 0.01, outlier_fraction: 0.3, outlier_min_distance: 0.015, seed,
    };
    let spec2 = |seed: u64| ContaminationSpec {
        noise_level: 0.02, outlier_fraction: 0.3, outlier_min_distance: 0.015, seed,
    };
    let train_kinds = [ShapeKind::Sphere, ShapeKind::Cube, ShapeKind::Torus];
    let mut train_clouds = Vec::new();
    for (i, kind) in train_kinds.iter().enumerate() {
        let clean = generate_shape(*kind, n_points, 20 + i as u64).unwrap();
        let shape = Shape::new(*kind);
        train_clouds.push(
            contaminate(&clean, SurfaceRef::Analytic(&shape), &spec1(30 + i as u64))
                .unwrap().contaminated,
        );
    }
    let det_samples = build_detector_dataset(&train_clouds, &pp, k, Some(400)).unwrap();
    let det_cfg = ModelConfig::small(ModelKind::Detector, GraphConvVariant::Dynamic, k);
    for epochs in [12usize, 20] {
        let hyper = TrainHyper { batch_size: 16, lr: 1e-3, epochs, seed: 3 };
        let (det_params, report) = train_detector(&det_samples, &det_cfg, &hyper, InitScheme::paper_default(ModelKind::Detector)).unwrap();
        println!("epochs {epochs}: last loss {:.4}", report.epoch_losses.last().unwrap().1);
        for (name, spec) in [("1%", spec1(70)), ("2%", spec2(70))] {
            let clean = generate_shape(ShapeKind::Icosahedron, n_points, 60).unwrap();
            let shape = Shape::new(ShapeKind::Icosahedron);
            let paired = contaminate(&clean, SurfaceRef::Analytic(&shape), &spec).unwrap();
            let cont = paired.contaminated.clone();
            let labels = cont.labels().unwrap().to_vec();
            let decision = classify_outliers(&cont, &det_cfg, &det_params, &pp, 0.5).unwrap();
            let injected = labels.iter().filter(|&&o| o).count();
            let caught = labels.iter().zip(&decision.is_outlier).filter(|(&l, &f)| l && f).count();
            let fp = labels.iter().zip(&decision.is_outlier).filter(|(&l, &f)| !l && f).count();
            let clean_total = labels.len() - injected;
            let score = aupr(&decision.probabilities, &labels).unwrap();
            println!(
                "  {name} holdout: recall {:.3}, fp-rate {:.3}, aupr {score:.3}",
                caught as f64 / injected as f64,
                fp as f64 / clean_total as f64,
            );
        }
    }
}

#[test]
#[ignore]
fn calibrate_detector_matrix() {
    let k = 16;
    let n_points = 2000;
    let spec1 = |seed: u64| ContaminationSpec {
        noise_level: 0.01, outlier_fraction: 0.3, outlier_min_distance: 0.015, seed,
    };
    let spec2 = |seed: u64| ContaminationSpec {
        noise_level: 0.02, outlier_fraction: 0.3, outlier_min_distance: 0.015, seed,
    };
    let det_cfg = ModelConfig::small(ModelKind::Detector, GraphConvVariant::Dynamic, k);
    for (rf, m) in [(0.12, 48usize)] {
        let pp = PatchParams { radius_fraction: rf, size: m, seed: 42 };
        let train_kinds = [ShapeKind::Sphere, ShapeKind::Cube, ShapeKind::Torus];
        let mut train_clouds = Vec::new();
        for (i, kind) in train_kinds.iter().enumerate() {
            let clean = generate_shape(*kind, n_points, 20 + i as u64).unwrap();
            let shape = Shape::new(*kind);
            train_clouds.push(
                contaminate(&clean, SurfaceRef::Analytic(&shape), &spec1(30 + i as u64))
                    .unwrap().contaminated,
            );
        }
        let det_samples = build_detector_dataset(&train_clouds, &pp, k, Some(400)).unwrap();
        for lr in [1e-3, 3e-4] {
            for seed in [3u64, 7] {
                let hyper = TrainHyper { batch_size: 16, lr, epochs: 30, seed };
                let t = Instant::now();
                let (det_params, report) = train_detector(&det_samples, &det_cfg, &hyper, InitScheme::paper_default(ModelKind::Detector)).unwrap();
                print!(
                    "rf {rf} m {m} lr {lr} seed {seed}: loss {:.3} in {:?};",
                    report.epoch_losses.last().unwrap().1, t.elapsed()
                );
                for (name, spec) in [("1%", spec1(70)), ("2%", spec2(70))] {
                    let clean = generate_shape(ShapeKind::Icosahedron, n_points, 60).unwrap();
                    let shape = Shape::new(ShapeKind::Icosahedron);
                    let paired = contaminate(&clean, SurfaceRef::Analytic(&shape), &spec).unwrap();
                    let cont = paired.contaminated.clone();
                    let labels = cont.labels().unwrap().to_vec();
                    let decision = classify_outliers(&cont, &det_cfg, &det_params, &pp, 0.5).unwrap();
                    let injected = labels.iter().filter(|&&o| o).count();
                    let caught = labels.iter().zip(&decision.is_outlier).filter(|(&l, &f)| l && f).count();
                    let fp = labels.iter().zip(&decision.is_outlier).filter(|(&l, &f)| !l && f).count();
                    let clean_total = labels.len() - injected;
                    let score = aupr(&decision.probabilities, &labels).unwrap();
                    print!(
                        " [{name}: recall {:.2} fp {:.3} aupr {score:.3}]",
                        caught as f64 / injected as f64,
                        fp as f64 / clean_total as f64,
                    );
                }
                println!();
            }
        }
    }
}

#[test]
#[ignore]
fn calibrate_seed_robustness() {
    let k = 16;
    let n_points = 2000;
    let spec1 = |seed: u64| ContaminationSpec {
        noise_level: 0.01, outlier_fraction: 0.3, outlier_min_distance: 0.015, seed,
    };
    let det_cfg = ModelConfig::small(ModelKind::Detector, GraphConvVariant::Dynamic, k);
    let pp = PatchParams { radius_fraction: 0.12, size: 48, seed: 42 };
    let train_kinds = [ShapeKind::Sphere, ShapeKind::Cube, ShapeKind::Torus];
    // two contamination draws per shape for more data diversity
    let mut train_clouds = Vec::new();
    for (i, kind) in train_kinds.iter().enumerate() {
        let clean = generate_shape(*kind, n_points, 20 + i as u64).unwrap();
        let shape = Shape::new(*kind);
        for j in 0..2u64 {
            train_clouds.push(
                contaminate(&clean, SurfaceRef::Analytic(&shape), &spec1(30 + i as u64 + 100 * j))
                    .unwrap().contaminated,
            );
        }
    }
    let det_samples = build_detector_dataset(&train_clouds, &pp, k, Some(300)).unwrap();
    println!("samples {}", det_samples.len());
    for (seed, lr) in [(1u64, 1e-3), (2, 3e-3), (3, 1e-2)] {
        let hyper = TrainHyper { batch_size: 16, lr, epochs: 40, seed };
        let (_, report) = train_detector(
            &det_samples, &det_cfg, &hyper, InitScheme::desk_default(ModelKind::Detector),
        ).unwrap();
        let losses: Vec<f64> = report.epoch_losses.iter().step_by(4).map(|(_, l)| (l * 1000.0).round() / 1000.0).collect();
        println!("seed {seed} lr {lr}: {losses:?}");
    }
}

use pcclean_core::autodiff::Tape;
use pcclean_core::network::{trunk_forward, BoundParams, ModelParams};
use pcclean_core::geometry::Patch;
use pcclean_core::geometry::Point3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
#[ignore]
fn probe_activation_scales() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut points = vec![Point3::new(0.0, 0.0, 0.0)];
    for _ in 1..48 {
        loop {
            let p = Point3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            if p.norm() <= 1.0 { points.push(p); break; }
        }
    }
    let patch = Patch { center_index: 0, points, scale: 0.4, centroid_offset: Point3::new(0.0, 0.0, 0.0) };
    let cfg = ModelConfig::small(ModelKind::Detector, GraphConvVariant::Dynamic, 16);
    let params = ModelParams::init_with(&cfg, InitScheme::desk_default(ModelKind::Detector), 3).unwrap();
    let mut tape = Tape::new();
    let bound = BoundParams::bind(&mut tape, &params);
    let (out, _rot, trace) = trunk_forward(&mut tape, &patch, &cfg, &bound).unwrap();
    for (i, s) in trace.stage_outputs.iter().enumerate() {
        let v = tape.value(*s).vals();
        let rms = (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt();
        println!("lfn{} rms = {rms:.3}", i + 1);
    }
    let v = tape.value(out).vals();
    println!("head out (pre-sigmoid, zero out.w) = {v:?}");
}
