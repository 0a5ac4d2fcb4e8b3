//! Acceptance gate: ten numbered end-to-end properties covering correctness,
//! algebraic identities, gradients, counts, latency, the training pipeline,
//! and format stability. One PASS/FAIL line prints per criterion (visible
//! with `cargo test --test acceptance -- --nocapture`); all tolerances are
//! pinned next to the checks they govern. The criteria run sequentially in
//! one test so the latency measurement (criterion 7) never shares the core
//! with another criterion.

use std::time::{Duration, Instant};

use wino3d::bench::{elementwise_latency, BenchCase, Strategy};
use wino3d::io::{decode_tensor, encode_tensor, lrt_byte_len};
use wino3d::layer::{CompactLayer, WinogradLayer};
use wino3d::lowrank::{spectrum_report, truncated_update_error};
use wino3d::model_io::{decode_model, encode_model};
use wino3d::pruning::{prune_pipeline, PruneConfig};
use wino3d::refconv::{direct_conv3d, random_problem};
use wino3d::rng::Rng;
use wino3d::tensor::{DType, Element, Matrix, Tensor};
use wino3d::trainer::{
    attach_lowrank, convert_to_winograd, evaluate, synth_dataset, tiny_c3d, train, Layer, Mode,
    Model, TrainConfig,
};
use wino3d::transform::{
    base_matrices, nested_input_transform, nested_kernel_transform, nested_output_transform,
    transforms_f2x3, TileGeometry, WinogradSpec,
};

type Check = std::result::Result<String, String>;

/// `‖a − b‖_∞ / ‖b‖_∞` in f64, robust to elementwise cancellation.
fn rel_inf<S: Element>(a: &[S], b: &[S]) -> f64 {
    assert_eq!(a.len(), b.len(), "comparing equal-length buffers");
    let mut diff = 0.0f64;
    let mut scale = 0.0f64;
    for (&x, &y) in a.iter().zip(b) {
        diff = diff.max((x.to_f64() - y.to_f64()).abs());
        scale = scale.max(y.to_f64().abs());
    }
    diff / scale.max(f64::MIN_POSITIVE)
}

fn within(elapsed: Duration, budget_s: u64, what: &str) -> std::result::Result<(), String> {
    if elapsed.as_secs() < budget_s {
        Ok(())
    } else {
        Err(format!("{what} took {elapsed:.1?}, budget {budget_s}s"))
    }
}

// ── 1: Winograd forward vs direct convolution ───────────────────────────────

fn criterion_1() -> Check {
    const TOL_F64: f64 = 1e-12;
    const TOL_F32: f64 = 1e-5;
    const PROBLEMS_PER_TYPE: usize = 120;
    const BUDGET_S: u64 = 120;

    fn sweep<S: Element>(salt: u64) -> std::result::Result<f64, String> {
        let mut worst = 0.0f64;
        for i in 0..PROBLEMS_PER_TYPE as u64 {
            let mut rng = Rng::new(salt ^ (0xACC0_0001 + i));
            let c_in = 1 + rng.below(8);
            let c_out = 1 + rng.below(8);
            let dims = [4 + rng.below(9), 4 + rng.below(9), 4 + rng.below(9)];
            let pad = rng.below(2);
            let p = random_problem::<S>(&mut rng, c_in, c_out, dims, 3, pad);
            let layer = WinogradLayer::from_spatial(&p.kernel, pad).map_err(|e| e.to_string())?;
            let (got, _) = layer.forward_dense(&p.input).map_err(|e| e.to_string())?;
            let want = direct_conv3d(&p).map_err(|e| e.to_string())?;
            worst = worst.max(rel_inf(got.data(), want.data()));
        }
        Ok(worst)
    }

    let t0 = Instant::now();
    let worst64 = sweep::<f64>(0)?;
    let worst32 = sweep::<f32>(1 << 32)?;
    within(t0.elapsed(), BUDGET_S, "correctness sweep")?;
    if worst64 <= TOL_F64 && worst32 <= TOL_F32 {
        Ok(format!(
            "{} problems: max rel err {worst64:.2e} f64 (tol {TOL_F64:.0e}), \
             {worst32:.2e} f32 (tol {TOL_F32:.0e}), {:.1?}",
            2 * PROBLEMS_PER_TYPE,
            t0.elapsed()
        ))
    } else {
        Err(format!(
            "rel err f64 {worst64:.2e} (tol {TOL_F64:.0e}) or f32 {worst32:.2e} (tol {TOL_F32:.0e}) out of range"
        ))
    }
}

// ── 2: flattened transforms vs nested 3D transforms ─────────────────────────

fn criterion_2() -> Check {
    const TOL: f64 = 1e-12;
    const TILES: usize = 100;

    let bm = base_matrices(WinogradSpec::f2x3()).map_err(|e| e.to_string())?;
    let ts = transforms_f2x3();
    let mut worst = [0.0f64; 3];
    for i in 0..TILES as u64 {
        let mut rng = Rng::new(0xACC0_0002 ^ i);

        let g = Tensor::<f64>::new(vec![3, 3, 3], rng.normals(27)).unwrap();
        let nested = nested_kernel_transform(&g, &bm).map_err(|e| e.to_string())?;
        let flat = Matrix::new(1, 27, g.data().to_vec()).unwrap().matmul(&ts.t_k);
        worst[0] = worst[0].max(rel_inf(flat.data(), nested.data()));

        let d = Tensor::<f64>::new(vec![4, 4, 4], rng.normals(64)).unwrap();
        let nested = nested_input_transform(&d, &bm).map_err(|e| e.to_string())?;
        let flat = Matrix::new(1, 64, d.data().to_vec()).unwrap().matmul(&ts.t_i);
        worst[1] = worst[1].max(rel_inf(flat.data(), nested.data()));

        let x = Tensor::<f64>::new(vec![4, 4, 4], rng.normals(64)).unwrap();
        let nested = nested_output_transform(&x, &bm).map_err(|e| e.to_string())?;
        let flat = Matrix::new(1, 64, x.data().to_vec()).unwrap().matmul(&ts.t_o);
        worst[2] = worst[2].max(rel_inf(flat.data(), nested.data()));
    }
    let max = worst[0].max(worst[1]).max(worst[2]);
    if max <= TOL {
        Ok(format!(
            "{TILES} tiles x 3 transforms: max rel err kernel {:.2e}, input {:.2e}, output {:.2e} (tol {TOL:.0e})",
            worst[0], worst[1], worst[2]
        ))
    } else {
        Err(format!("transform mismatch {max:.2e} exceeds {TOL:.0e}"))
    }
}

// ── 3: spatial-inherited weights have numerical rank ≤ 27 ───────────────────

fn criterion_3() -> Check {
    const TAIL_RATIO: f64 = 1e-10;
    const HEAD_FRACTION: f64 = 1.0 - 1e-9;
    const SEEDS: usize = 20;
    // (C_o, C_i) with C_o·C_i ≥ 128.
    const SHAPES: [(usize, usize); 5] = [(16, 8), (8, 16), (32, 4), (16, 16), (12, 12)];

    let mut worst_tail = 0.0f64;
    let mut worst_head = 1.0f64;
    for i in 0..SEEDS as u64 {
        let mut rng = Rng::new(0xACC0_0003 ^ i);
        let (c_out, c_in) = SHAPES[i as usize % SHAPES.len()];
        let kernel = Tensor::<f64>::new(
            vec![c_out, c_in, 3, 3, 3],
            rng.normals(c_out * c_in * 27),
        )
        .unwrap();
        let layer = WinogradLayer::from_spatial(&kernel, 1).map_err(|e| e.to_string())?;
        let report = spectrum_report(&layer.g_w).map_err(|e| e.to_string())?;
        for (j, &s) in report.sigma.iter().enumerate().skip(27) {
            let ratio = s / report.sigma[0];
            worst_tail = worst_tail.max(ratio);
            if ratio > TAIL_RATIO {
                return Err(format!(
                    "sigma[{j}]/sigma[0] = {ratio:.2e} for {c_out}x{c_in} (tol {TAIL_RATIO:.0e})"
                ));
            }
        }
        worst_head = worst_head.min(report.cumulative_fractions[26]);
    }
    if worst_head >= HEAD_FRACTION {
        Ok(format!(
            "{SEEDS} inherited weight matrices: tail ratio ≤ {worst_tail:.2e} (tol {TAIL_RATIO:.0e}), \
             top-27 fraction ≥ {worst_head:.12} (floor {HEAD_FRACTION})"
        ))
    } else {
        Err(format!(
            "top-27 cumulative fraction {worst_head} below {HEAD_FRACTION}"
        ))
    }
}

// ── 4: analytic gradients vs central finite differences ─────────────────────

fn criterion_4() -> Check {
    const EPS: f64 = 1e-5;
    const TOL: f64 = 1e-6;
    const LAYERS: usize = 20;
    const INPUT_PROBES: usize = 40;

    // Scalar objective L = Σ w ⊙ forward(input); dL/dout = w.
    fn loss(layer: &WinogradLayer<f64>, input: &Tensor<f64>, w: &[f64]) -> f64 {
        let (out, _) = layer.forward_lowrank(input).unwrap();
        out.data().iter().zip(w).map(|(&o, &wi)| o * wi).sum()
    }

    let mut worst = 0.0f64;
    let mut checked = 0usize;
    for i in 0..LAYERS as u64 {
        let mut rng = Rng::new(0xACC0_0004 ^ i);
        let c_in = 1 + rng.below(3);
        let c_out = 1 + rng.below(3);
        let dims = [4 + rng.below(4), 4 + rng.below(4), 4 + rng.below(4)];
        let pad = rng.below(2);
        let s = 1 + rng.below(2);
        let p = random_problem::<f64>(&mut rng, c_in, c_out, dims, 3, pad);
        let mut layer = WinogradLayer::from_spatial(&p.kernel, pad).map_err(|e| e.to_string())?;
        let g_r = Matrix::new(c_out * c_in, s, rng.normals(c_out * c_in * s)).unwrap();
        let g_c = Matrix::new(s, 64, rng.normals(s * 64)).unwrap();
        layer.set_rank_factors(g_r, g_c).map_err(|e| e.to_string())?;
        if i % 2 == 1 {
            // Odd layers also exercise the masked gradient path.
            let mut mask = vec![true; 64];
            for _ in 0..16 {
                mask[rng.below(64)] = false;
            }
            layer.set_mask(mask).map_err(|e| e.to_string())?;
        }

        let (out, cache) = layer.forward_lowrank(&p.input).map_err(|e| e.to_string())?;
        let w = rng.normals(out.len());
        let d_out = Tensor::new(out.dims().to_vec(), w.clone()).unwrap();
        let grads = layer.backward(&cache, &d_out).map_err(|e| e.to_string())?;

        let mut compare = |analytic: f64, numeric: f64, what: &str| {
            let rel = (analytic - numeric).abs() / numeric.abs().max(analytic.abs()).max(1.0);
            worst = worst.max(rel);
            checked += 1;
            if rel > TOL {
                Err(format!(
                    "{what}: analytic {analytic:.9e} vs central-diff {numeric:.9e}, rel {rel:.2e} (tol {TOL:.0e})"
                ))
            } else {
                Ok(())
            }
        };

        for idx in 0..layer.g_r.data().len() {
            let mut plus = layer.clone();
            plus.g_r.data_mut()[idx] += EPS;
            let mut minus = layer.clone();
            minus.g_r.data_mut()[idx] -= EPS;
            let numeric = (loss(&plus, &p.input, &w) - loss(&minus, &p.input, &w)) / (2.0 * EPS);
            compare(grads.d_g_r.data()[idx], numeric, "dG_r")?;
        }
        for idx in 0..layer.g_c.data().len() {
            let mut plus = layer.clone();
            plus.g_c.data_mut()[idx] += EPS;
            let mut minus = layer.clone();
            minus.g_c.data_mut()[idx] -= EPS;
            let numeric = (loss(&plus, &p.input, &w) - loss(&minus, &p.input, &w)) / (2.0 * EPS);
            compare(grads.d_g_c.data()[idx], numeric, "dG_c")?;
        }
        for _ in 0..INPUT_PROBES {
            let idx = rng.below(p.input.len());
            let mut plus = p.input.clone();
            plus.data_mut()[idx] += EPS;
            let mut minus = p.input.clone();
            minus.data_mut()[idx] -= EPS;
            let numeric = (loss(&layer, &plus, &w) - loss(&layer, &minus, &w)) / (2.0 * EPS);
            compare(grads.d_input.data()[idx], numeric, "dI")?;
        }
    }
    Ok(format!(
        "{LAYERS} layers, {checked} partials (dG_r, dG_c, dI): max rel err {worst:.2e} (tol {TOL:.0e}, eps {EPS:.0e})"
    ))
}

// ── 5: low-rank trainable-parameter formula ─────────────────────────────────

fn criterion_5() -> Check {
    // Reference point: C_o = C_i = 64, s = 8 → 33,280 trainable vs 262,144 dense.
    let mut rng = Rng::new(0xACC0_0005);
    let kernel = Tensor::<f32>::new(vec![64, 64, 3, 3, 3], rng.normal_elems(64 * 64 * 27)).unwrap();
    let mut layer = WinogradLayer::from_spatial(&kernel, 1).map_err(|e| e.to_string())?;
    layer
        .set_rank_factors(Matrix::zeros(64 * 64, 8), Matrix::zeros(8, 64))
        .map_err(|e| e.to_string())?;
    if layer.dense_param_count() != 262_144 {
        return Err(format!("dense count {} != 262144", layer.dense_param_count()));
    }
    if layer.lowrank_param_count() != 33_280 {
        return Err(format!("low-rank count {} != 33280", layer.lowrank_param_count()));
    }

    for i in 0..10u64 {
        let mut rng = Rng::new(0xACC0_0015 ^ i);
        let (c_out, c_in, s) = (1 + rng.below(16), 1 + rng.below(16), 1 + rng.below(16));
        let kernel =
            Tensor::<f32>::new(vec![c_out, c_in, 3, 3, 3], rng.normal_elems(c_out * c_in * 27))
                .unwrap();
        let mut layer = WinogradLayer::from_spatial(&kernel, 0).map_err(|e| e.to_string())?;
        layer
            .set_rank_factors(Matrix::zeros(c_out * c_in, s), Matrix::zeros(s, 64))
            .map_err(|e| e.to_string())?;
        let want = c_out * c_in * s + s * 64;
        if layer.lowrank_param_count() != want {
            return Err(format!(
                "{c_out}x{c_in} s={s}: count {} != C_o·C_i·s + s·t³ = {want}",
                layer.lowrank_param_count()
            ));
        }
        if layer.dense_param_count() != c_out * c_in * 64 {
            return Err(format!("dense count mismatch at {c_out}x{c_in}"));
        }
    }
    Ok(format!(
        "exact for 64x64 s=8 (33,280 vs 262,144 dense, {:.2}x) and 10 random (C_o, C_i, s)",
        262_144.0 / 33_280.0
    ))
}

// ── 6: compact sparse path == masked low-rank path, exact multiply count ────

fn criterion_6() -> Check {
    const TOL: f64 = 1e-12;
    const PAIRS: usize = 100;

    let mut worst = 0.0f64;
    for i in 0..PAIRS as u64 {
        let mut rng = Rng::new(0xACC0_0006 ^ i);
        let c_in = 1 + rng.below(6);
        let c_out = 1 + rng.below(6);
        let dims = [4 + rng.below(6), 4 + rng.below(6), 4 + rng.below(6)];
        let pad = rng.below(2);
        let p = random_problem::<f64>(&mut rng, c_in, c_out, dims, 3, pad);
        let mut layer = WinogradLayer::from_spatial(&p.kernel, pad).map_err(|e| e.to_string())?;
        let s = rng.below(3);
        if s > 0 {
            let g_r = Matrix::new(c_out * c_in, s, rng.normals(c_out * c_in * s)).unwrap();
            let g_c = Matrix::new(s, 64, rng.normals(s * 64)).unwrap();
            layer.set_rank_factors(g_r, g_c).map_err(|e| e.to_string())?;
        }
        let l = 1 + rng.below(64);
        let mut cols: Vec<usize> = (0..64).collect();
        rng.shuffle(&mut cols);
        let mut mask = vec![false; 64];
        for &c in &cols[..l] {
            mask[c] = true;
        }
        layer.set_mask(mask).map_err(|e| e.to_string())?;

        let compact = CompactLayer::from_layer(&layer).map_err(|e| e.to_string())?;
        let (want, _) = layer.forward_lowrank(&p.input).map_err(|e| e.to_string())?;
        let (got, counts) = compact.forward_counted(&p.input).map_err(|e| e.to_string())?;
        worst = worst.max(rel_inf(got.data(), want.data()));
        if worst > TOL {
            return Err(format!(
                "pair {i}: sparse vs masked rel err {worst:.2e} (tol {TOL:.0e})"
            ));
        }

        let tiles = TileGeometry::new(WinogradSpec::f2x3(), pad, c_in, dims)
            .map_err(|e| e.to_string())?
            .tile_count();
        let want_mults = (tiles * c_in * c_out * l) as u64;
        if counts.ew_mults != want_mults {
            return Err(format!(
                "pair {i}: counter {} != T·C_i·C_o·l = {tiles}·{c_in}·{c_out}·{l} = {want_mults}",
                counts.ew_mults
            ));
        }
    }
    Ok(format!(
        "{PAIRS} (layer, mask) pairs: max rel err {worst:.2e} (tol {TOL:.0e}), counter exact"
    ))
}

// ── 7: element-wise stage latency falls with sparsity ───────────────────────

fn criterion_7() -> Check {
    const SPARSITIES: [f64; 5] = [0.0, 0.3, 0.5, 0.7, 0.9];
    const ROUNDS: usize = 5;
    const REPS: usize = 11;
    const MIN_SPEEDUP_AT_HALF: f64 = 1.5;
    const BUDGET_S: u64 = 300;

    let t0 = Instant::now();
    let cases: Vec<BenchCase> = SPARSITIES
        .iter()
        .map(|&s| BenchCase::new("c3d_conv", 0xACC0_0007, 64, 64, [8, 28, 28], 1, s))
        .collect::<wino3d::Result<_>>()
        .map_err(|e| e.to_string())?;

    // Rounds interleave across sparsities so slow host drift (thermal or
    // scheduler) hits every point equally; each point then reports the
    // median of its per-round medians.
    let mut samples = [[0u64; ROUNDS]; SPARSITIES.len()];
    for round in 0..ROUNDS {
        for (i, case) in cases.iter().enumerate() {
            let (ns, _) =
                elementwise_latency(Strategy::Sparse, case, REPS, 1).map_err(|e| e.to_string())?;
            samples[i][round] = ns;
        }
    }
    let medians: Vec<u64> = samples
        .iter()
        .map(|s| {
            let mut s = *s;
            s.sort_unstable();
            s[ROUNDS / 2]
        })
        .collect();
    within(t0.elapsed(), BUDGET_S, "latency sweep")?;

    let pretty: Vec<String> = SPARSITIES
        .iter()
        .zip(&medians)
        .map(|(s, ns)| format!("{s}: {:.2}ms", *ns as f64 / 1e6))
        .collect();
    for w in medians.windows(2) {
        if w[1] >= w[0] {
            return Err(format!(
                "latency not strictly decreasing: [{}]",
                pretty.join(", ")
            ));
        }
    }
    let speedup = medians[0] as f64 / medians[2] as f64;
    if speedup < MIN_SPEEDUP_AT_HALF {
        return Err(format!(
            "dense/half-sparse ratio {speedup:.2} below {MIN_SPEEDUP_AT_HALF} [{}]",
            pretty.join(", ")
        ));
    }
    Ok(format!(
        "strictly decreasing [{}], {speedup:.2}x at sparsity 0.5 (floor {MIN_SPEEDUP_AT_HALF}x), {:.0?}",
        pretty.join(", "),
        t0.elapsed()
    ))
}

// ── 8: training-pipeline regression on the synthetic task ───────────────────

// Frozen configuration: first green run of this seed pins the thresholds.
const C8_SEED: u64 = 0xC3D;
const C8_DIMS: [usize; 4] = [1, 8, 16, 16];
const C8_CLASSES: usize = 4;
const C8_TRAIN_N: usize = 128;
const C8_EVAL_N: usize = 64;
const C8_EPOCHS: usize = 10;
const C8_SCORE_EPOCHS: usize = 2;
const C8_RETRAIN_EPOCHS: usize = 6;
const C8_RANK_PLAN: [usize; 2] = [4, 8];
const C8_LR_WITHIN: f64 = 0.01; // (a) LR accuracy ≥ FW accuracy − 1 point
const C8_PARAM_FRACTION: f64 = 0.25; // (a) LR trains ≤ 25% of FW's Winograd params
const C8_PRUNE_WITHIN: f64 = 0.02; // (b) pruned accuracy ≥ LR accuracy − 2 points
const C8_BUDGET_S: u64 = 900;

fn criterion_8() -> Check {
    let t0 = Instant::now();
    let train_ds =
        synth_dataset::<f32>(C8_SEED, C8_TRAIN_N, C8_CLASSES, C8_DIMS).map_err(|e| e.to_string())?;
    let eval_ds = synth_dataset::<f32>(C8_SEED.wrapping_add(1), C8_EVAL_N, C8_CLASSES, C8_DIMS)
        .map_err(|e| e.to_string())?;
    let base = tiny_c3d::<f32>(C8_SEED, C8_CLASSES, C8_DIMS).map_err(|e| e.to_string())?;

    let mut fw = convert_to_winograd(&base).map_err(|e| e.to_string())?;
    let mut cfg = TrainConfig::new(Mode::Fw);
    cfg.epochs = C8_EPOCHS;
    cfg.seed = C8_SEED;
    train(&mut fw, &train_ds, None, &cfg).map_err(|e| e.to_string())?;
    let (_, acc_fw) = evaluate(&fw, &eval_ds).map_err(|e| e.to_string())?;
    let fw_params: usize = fw.winograd_layers().iter().map(|l| l.dense_param_count()).sum();

    let mut lr = convert_to_winograd(&base).map_err(|e| e.to_string())?;
    attach_lowrank(&mut lr, &C8_RANK_PLAN, 0.1).map_err(|e| e.to_string())?;
    let mut cfg = TrainConfig::new(Mode::Lr);
    cfg.epochs = C8_EPOCHS;
    cfg.seed = C8_SEED;
    train(&mut lr, &train_ds, None, &cfg).map_err(|e| e.to_string())?;
    let (_, acc_lr) = evaluate(&lr, &eval_ds).map_err(|e| e.to_string())?;
    let lr_params: usize = lr.winograd_layers().iter().map(|l| l.lowrank_param_count()).sum();

    let mut pruned = convert_to_winograd(&base).map_err(|e| e.to_string())?;
    let mut pcfg = PruneConfig::new(0.5, C8_RETRAIN_EPOCHS);
    pcfg.score_epochs = C8_SCORE_EPOCHS;
    pcfg.rank_plan = C8_RANK_PLAN.to_vec();
    pcfg.seed = C8_SEED;
    prune_pipeline(&mut pruned, &train_ds, None, &pcfg).map_err(|e| e.to_string())?;
    let (_, acc_pruned) = evaluate(&pruned, &eval_ds).map_err(|e| e.to_string())?;

    within(t0.elapsed(), C8_BUDGET_S, "pipeline run")?;
    let frac = lr_params as f64 / fw_params as f64;
    if frac > C8_PARAM_FRACTION {
        return Err(format!(
            "LR trains {lr_params} of {fw_params} Winograd params ({frac:.3}), cap {C8_PARAM_FRACTION}"
        ));
    }
    if acc_lr < acc_fw - C8_LR_WITHIN {
        return Err(format!(
            "LR accuracy {acc_lr:.4} more than {C8_LR_WITHIN} below FW {acc_fw:.4}"
        ));
    }
    if acc_pruned < acc_lr - C8_PRUNE_WITHIN {
        return Err(format!(
            "pruned accuracy {acc_pruned:.4} more than {C8_PRUNE_WITHIN} below LR {acc_lr:.4}"
        ));
    }
    Ok(format!(
        "FW {acc_fw:.4}, LR {acc_lr:.4} with {:.1}% of params (cap 25%), pruned@0.5 {acc_pruned:.4}, {:.0?}",
        100.0 * frac,
        t0.elapsed()
    ))
}

// ── 9: rank-s truncation error is monotone and vanishes at full rank ────────

fn criterion_9() -> Check {
    const TOL_AT_FULL: f64 = 1e-10;
    const RANKS: [usize; 9] = [0, 1, 2, 4, 8, 16, 32, 48, 64];

    for i in 0..10u64 {
        let mut rng = Rng::new(0xACC0_0009 ^ i);
        let rows = 32 + rng.below(97);
        let delta = Matrix::new(rows, 64, rng.normals(rows * 64)).unwrap();
        let errs: Vec<f64> = RANKS
            .iter()
            .map(|&s| truncated_update_error(&delta, s))
            .collect::<wino3d::Result<_>>()
            .map_err(|e| e.to_string())?;
        for (w, ranks) in errs.windows(2).zip(RANKS.windows(2)) {
            if w[1] > w[0] {
                return Err(format!(
                    "error rose from {:.3e} (s={}) to {:.3e} (s={})",
                    w[0], ranks[0], w[1], ranks[1]
                ));
            }
        }
        let at_full = *errs.last().unwrap();
        if at_full > TOL_AT_FULL {
            return Err(format!(
                "error {at_full:.2e} at s = t³ = 64 (tol {TOL_AT_FULL:.0e})"
            ));
        }
    }
    Ok(format!(
        "10 matrices, s ∈ {RANKS:?}: non-increasing, 0 at s = 64 (tol {TOL_AT_FULL:.0e})"
    ))
}

// ── 10: serialization round-trips and closed-form sizes ─────────────────────

fn criterion_10() -> Check {
    // Tensors: byte length matches the closed form, decode → re-encode is
    // bit-identical.
    for i in 0..10u64 {
        let mut rng = Rng::new(0xACC0_000A ^ i);
        let ndim = 1 + rng.below(4);
        let dims: Vec<usize> = (0..ndim).map(|_| 1 + rng.below(6)).collect();
        let n = dims.iter().product();
        let bytes = if i % 2 == 0 {
            let t = Tensor::<f32>::new(dims.clone(), rng.normal_elems(n)).unwrap();
            let b = encode_tensor(&t);
            if b.len() != lrt_byte_len(DType::F32, &dims) {
                return Err(format!("f32 tensor {dims:?}: {} bytes, closed form disagrees", b.len()));
            }
            b
        } else {
            let t = Tensor::<f64>::new(dims.clone(), rng.normals(n)).unwrap();
            let b = encode_tensor(&t);
            if b.len() != lrt_byte_len(DType::F64, &dims) {
                return Err(format!("f64 tensor {dims:?}: {} bytes, closed form disagrees", b.len()));
            }
            b
        };
        let back = decode_tensor(&bytes).map_err(|e| e.to_string())?;
        let again = match back {
            wino3d::io::AnyTensor::F32(t) => encode_tensor(&t),
            wino3d::io::AnyTensor::F64(t) => encode_tensor(&t),
        };
        if again != bytes {
            return Err(format!("tensor {dims:?} round-trip not bit-identical"));
        }
    }

    // Compact layers: file size equals the closed-form payload
    //   8 (file header) + 12 (record header) + 2 (l) + 2l (𝒫) + 4·C_o·C_i·l (Ḡ_W).
    for i in 0..10u64 {
        let mut rng = Rng::new(0xACC0_001A ^ i);
        let (c_out, c_in, l) = (1 + rng.below(8), 1 + rng.below(8), 1 + rng.below(64));
        let kernel =
            Tensor::<f32>::new(vec![c_out, c_in, 3, 3, 3], rng.normal_elems(c_out * c_in * 27))
                .unwrap();
        let mut layer = WinogradLayer::from_spatial(&kernel, 1).map_err(|e| e.to_string())?;
        let mut cols: Vec<usize> = (0..64).collect();
        rng.shuffle(&mut cols);
        let mut mask = vec![false; 64];
        for &c in &cols[..l] {
            mask[c] = true;
        }
        layer.set_mask(mask).map_err(|e| e.to_string())?;
        let compact = CompactLayer::from_layer(&layer).map_err(|e| e.to_string())?;
        let model = Model { layers: vec![Layer::WinogradCompact(compact)] };
        let bytes = encode_model(&model).map_err(|e| e.to_string())?;
        let want = 8 + 12 + 2 + 2 * l + 4 * c_out * c_in * l;
        if bytes.len() != want {
            return Err(format!(
                "compact {c_out}x{c_in} l={l}: {} bytes, closed form {want}",
                bytes.len()
            ));
        }
        let back = decode_model(&bytes).map_err(|e| e.to_string())?;
        if encode_model(&back).map_err(|e| e.to_string())? != bytes {
            return Err(format!("compact model {c_out}x{c_in} l={l} round-trip changed bytes"));
        }
    }

    // A full mixed model (spatial stem, low-rank + masked Winograd layers,
    // pooling, classifier) survives a round trip with identical inference.
    let base = tiny_c3d::<f32>(0xACC0_002A, 4, [1, 8, 16, 16]).map_err(|e| e.to_string())?;
    let mut model = convert_to_winograd(&base).map_err(|e| e.to_string())?;
    attach_lowrank(&mut model, &[4, 8], 0.1).map_err(|e| e.to_string())?;
    {
        let mut rng = Rng::new(0xACC0_003A);
        let layers = model.winograd_layers_mut();
        for layer in layers {
            let mut mask = vec![true; 64];
            for _ in 0..20 {
                mask[rng.below(64)] = false;
            }
            layer.set_mask(mask).map_err(|e| e.to_string())?;
        }
    }
    let bytes = encode_model(&model).map_err(|e| e.to_string())?;
    let back = decode_model(&bytes).map_err(|e| e.to_string())?;
    if encode_model(&back).map_err(|e| e.to_string())? != bytes {
        return Err("mixed model round-trip changed bytes".into());
    }
    let mut rng = Rng::new(0xACC0_004A);
    let input = Tensor::<f32>::new(vec![1, 8, 16, 16], rng.normal_elems(8 * 16 * 16)).unwrap();
    let a = model.infer(&input).map_err(|e| e.to_string())?;
    let b = back.infer(&input).map_err(|e| e.to_string())?;
    if !a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()) {
        return Err("decoded model's logits differ bitwise".into());
    }
    Ok("10 tensors + 10 compact configs match closed-form sizes; round-trips bit-identical".into())
}

// ── the gate ────────────────────────────────────────────────────────────────

#[test]
fn acceptance() {
    let criteria: [(&str, fn() -> Check); 10] = [
        ("winograd forward matches direct convolution", criterion_1),
        ("flattened transforms match nested transforms", criterion_2),
        ("inherited weights concentrate in 27 singular values", criterion_3),
        ("factor and input gradients match finite differences", criterion_4),
        ("low-rank parameter formula is exact", criterion_5),
        ("compact path matches masked path with exact counts", criterion_6),
        ("element-wise latency falls with sparsity", criterion_7),
        ("low-rank and pruned training hold accuracy", criterion_8),
        ("truncation error is monotone, zero at full rank", criterion_9),
        ("serialized formats are stable and exactly sized", criterion_10),
    ];

    let mut failures = Vec::new();
    for (i, (name, run)) in criteria.iter().enumerate() {
        match run() {
            Ok(detail) => println!("criterion {:>2} PASS  {name} — {detail}", i + 1),
            Err(detail) => {
                println!("criterion {:>2} FAIL  {name} — {detail}", i + 1);
                failures.push(format!("criterion {}: {detail}", i + 1));
            }
        }
    }
    assert!(failures.is_empty(), "acceptance failures:\n{}", failures.join("\n"));
}
