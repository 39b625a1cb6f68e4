//! Release gate: one numbered check per acceptance criterion, each printed
//! as a PASS/FAIL line with its wall time. Runs without the libtest harness.

mod common;

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use hairseg::io;
use hairseg::pipeline::PipelineReport;
use hairseg_core::fusion::evaluate;
use hairseg_core::guidance::{
    add_noise, guided_reverse_step, masked_l2, total_loss, x0_hat, BlendVariant, FixedNoise,
    GuidanceWeights, ImageTensor, LossTerms, MaskPreservationLoss, NoiseSchedule, ZeroLoss,
};
use hairseg_core::planner::{plan_jobs, sampling_ratios, Disease, LabelIndex, LabelRecord, PlanConfig, SamplingRatios, SeverityCounts, DEFAULT_EPSILON};
use hairseg_core::prompter::{mean_point, nms, skeletonize, BoundingBox, Point};
use hairseg_core::pseudogen::simulate_coarse_mask;
use hairseg_core::raster::{dilate, erode, BinaryMask, StructuringElement};
use hairseg_core::rng::{substream, StreamRng};
use num::{BigRational, ToPrimitive};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use tempfile::TempDir;

type Outcome = Result<String, String>;
type Check<'a> = (u32, &'static str, Duration, Box<dyn Fn() -> Outcome + 'a>);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn random_mask(rng: &mut StreamRng, w: usize, h: usize, p: f64) -> BinaryMask {
    BinaryMask::from_fn(w, h, |_, _| rng.gen_bool(p)).unwrap()
}

fn random_mask_in(rng: &mut StreamRng, w: usize, h: usize, density: std::ops::Range<f64>) -> BinaryMask {
    let p = rng.gen_range(density);
    random_mask(rng, w, h, p)
}

/// Union of a few discs and rectangles.
fn random_blob(rng: &mut StreamRng, size: usize) -> BinaryMask {
    let shapes: Vec<(i64, i64, i64, i64, bool)> = (0..rng.gen_range(1..6))
        .map(|_| {
            (
                rng.gen_range(0..size as i64),
                rng.gen_range(0..size as i64),
                rng.gen_range(1..14),
                rng.gen_range(1..14),
                rng.gen_bool(0.5),
            )
        })
        .collect();
    BinaryMask::from_fn(size, size, |r, c| {
        shapes.iter().any(|&(cr, cc, a, b, disc)| {
            let (dr, dc) = (r as i64 - cr, c as i64 - cc);
            if disc {
                dr * dr + dc * dc <= a * a
            } else {
                dr.abs() <= a && dc.abs() <= b
            }
        })
    })
    .unwrap()
}

fn random_tensor(rng: &mut StreamRng, c: usize, h: usize, w: usize) -> ImageTensor {
    ImageTensor::from_fn(c, h, w, |_, _, _| rng.gen_range(-1.0..1.0))
}

fn square_box(x: usize, y: usize, side: usize, score: f64) -> BoundingBox {
    BoundingBox {
        x_min: x,
        y_min: y,
        x_max: x + side,
        y_max: y + side,
        score,
    }
}

fn morphology() -> Outcome {
    let mut rng = StreamRng::seed_from_u64(1);
    let elements = [StructuringElement::cross(), StructuringElement::square(), StructuringElement::disc(2)];
    for _ in 0..100 {
        let m = random_mask_in(&mut rng, 32, 32, 0.2..0.8);
        for se in &elements {
            let lhs = erode(&m, se);
            let rhs = dilate(&m.complement(), &se.reflected()).complement();
            // zero padding breaks duality only within reach of the border
            for r in 2..30 {
                for c in 2..30 {
                    ensure!(lhs.get(r, c) == rhs.get(r, c), "duality fails at ({r}, {c})");
                }
            }
            let opened = dilate(&erode(&m, se), se);
            ensure!(opened.is_subset_of(&m), "opening grew the mask");
        }
    }

    let cross = StructuringElement::cross();
    let dot = BinaryMask::from_points(9, 9, [(4, 4)]).unwrap();
    ensure!(erode(&dot, &cross).is_empty(), "single pixel survives erosion");
    let plus = BinaryMask::from_points(9, 9, [(4, 4), (3, 4), (5, 4), (4, 3), (4, 5)]).unwrap();
    ensure!(dilate(&dot, &cross) == plus, "dilated pixel is not a cross");
    let rec = skeletonize(&dot, &cross);
    ensure!(rec.skeleton() == &dot && rec.iterations() == 1, "single pixel skeleton");

    let line = BinaryMask::from_fn(30, 5, |r, c| r == 2 && (3..27).contains(&c)).unwrap();
    let rec = skeletonize(&line, &cross);
    ensure!(rec.skeleton() == &line && rec.iterations() == 1, "line skeleton");

    let square = BinaryMask::from_fn(7, 7, |r, c| (2..5).contains(&r) && (2..5).contains(&c)).unwrap();
    ensure!(erode(&square, &cross) == BinaryMask::from_points(7, 7, [(3, 3)]).unwrap(), "square erosion");
    let rec = skeletonize(&square, &cross);
    let corners_center = BinaryMask::from_points(7, 7, [(2, 2), (2, 4), (4, 2), (4, 4), (3, 3)]).unwrap();
    ensure!(rec.skeleton() == &corners_center && rec.iterations() == 2, "square skeleton");
    Ok("300 duality/opening cases, 3 hand skeletons".into())
}

fn reconstruction() -> Outcome {
    let mut rng = StreamRng::seed_from_u64(2);
    let cross = StructuringElement::cross();
    let mut pixels = 0;
    for i in 0..200 {
        let blob = random_blob(&mut rng, 64);
        pixels += blob.count_ones();
        ensure!(skeletonize(&blob, &cross).reconstruct(&cross) == blob, "blob {i} does not reconstruct");
    }
    Ok(format!("200 blobs, {pixels} pixels reconstructed"))
}

fn exact_mean(mask: &BinaryMask, b: &BoundingBox) -> Option<(BigRational, BigRational)> {
    let (mut n, mut rows, mut cols) = (0i64, 0i64, 0i64);
    for r in b.y_min..b.y_max {
        for c in b.x_min..b.x_max {
            if r < mask.height() && c < mask.width() && mask.get(r, c) {
                n += 1;
                rows += r as i64;
                cols += c as i64;
            }
        }
    }
    (n > 0).then(|| (BigRational::new(rows.into(), n.into()), BigRational::new(cols.into(), n.into())))
}

fn mean_points() -> Outcome {
    let mut rng = StreamRng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    let mut empty = 0;
    for _ in 0..1000 {
        let (w, h) = (rng.gen_range(8..48), rng.gen_range(8..48));
        let mask = random_mask_in(&mut rng, w, h, 0.02..0.6);
        let (x, y) = (rng.gen_range(0..w), rng.gen_range(0..h));
        let b = square_box(x, y, rng.gen_range(2..16), 0.0);
        match (exact_mean(&mask, &b), mean_point(&mask, &b)) {
            (None, Err(_)) => empty += 1,
            (Some((er, ec)), Ok(Point { row, col })) => {
                let err_r = (BigRational::from_float(row).unwrap() - er).to_f64().unwrap().abs();
                let err_c = (BigRational::from_float(col).unwrap() - ec).to_f64().unwrap().abs();
                worst = worst.max(err_r).max(err_c);
            }
            (exact, got) => return Err(format!("emptiness disagrees: {exact:?} vs {got:?}")),
        }
    }
    ensure!(worst <= 1e-12, "max error {worst:e}");
    Ok(format!("1000 pairs ({empty} empty), max error {worst:e}"))
}

fn nms_contract() -> Outcome {
    let mut rng = StreamRng::seed_from_u64(4);
    for _ in 0..500 {
        let mut boxes: Vec<BoundingBox> = (0..rng.gen_range(0..40))
            .map(|_| {
                let (x, y) = (rng.gen_range(0..40), rng.gen_range(0..40));
                BoundingBox {
                    x_min: x,
                    y_min: y,
                    x_max: x + rng.gen_range(1..15),
                    y_max: y + rng.gen_range(1..15),
                    score: f64::from(rng.gen_range(0..20)),
                }
            })
            .collect();
        let t = rng.gen_range(0.0..=1.0);
        let kept = nms(&boxes, t).map_err(|e| e.to_string())?;
        for (i, a) in kept.iter().enumerate() {
            ensure!(boxes.contains(a), "survivor not in input");
            for b in &kept[i + 1..] {
                ensure!(a.iou(b) <= t, "survivors overlap with IoU {} > {t}", a.iou(b));
            }
        }
        boxes.shuffle(&mut rng);
        ensure!(nms(&boxes, t).unwrap() == kept, "result depends on input order");
    }
    let a = square_box(0, 0, 10, 5.0);
    let b = square_box(5, 0, 10, 3.0);
    ensure!((a.iou(&b) - 1.0 / 3.0).abs() <= 1e-15, "hand IoU is {}", a.iou(&b));
    ensure!(nms(&[b, a], 0.3).unwrap() == [a], "threshold 0.3 keeps the weaker box");
    ensure!(nms(&[b, a], 0.5).unwrap() == [a, b], "threshold 0.5 drops a box");
    Ok("500 random sets, IoU 1/3 example at 0.3 and 0.5".into())
}

fn index_with_levels(per_level: [usize; 4], seed: u64) -> LabelIndex {
    let mut rng = StreamRng::seed_from_u64(seed);
    let mut records = Vec::new();
    for (level, &n) in per_level.iter().enumerate() {
        for _ in 0..n {
            let id = format!("img{:04}", records.len());
            records.push(LabelRecord {
                id,
                severities: [level as u8, rng.gen_range(0..4), rng.gen_range(0..4)],
            });
        }
    }
    LabelIndex::new(records).unwrap()
}

fn sampling() -> Outcome {
    let close = |got: &SamplingRatios, want: [f64; 4], tol: f64| got.0.iter().zip(want).all(|(g, w)| (g - w).abs() <= tol);
    let uniform = sampling_ratios(&SeverityCounts([10, 10, 10, 10]), DEFAULT_EPSILON);
    ensure!(close(&uniform, [0.25; 4], 1e-12), "equal counts: {uniform:?}");
    let ninths = [1.0 / 9.0, 2.0 / 9.0, 2.0 / 9.0, 4.0 / 9.0];
    let skew = sampling_ratios(&SeverityCounts([4, 2, 2, 1]), DEFAULT_EPSILON);
    ensure!(close(&skew, ninths, 1e-9), "[4,2,2,1]: {skew:?}");
    let exact = sampling_ratios(&SeverityCounts([4, 2, 2, 1]), 0.0);
    ensure!(close(&exact, ninths, 1e-12), "[4,2,2,1] without epsilon: {exact:?}");
    let dominant = sampling_ratios(&SeverityCounts([1, 0, 1, 1]), DEFAULT_EPSILON);
    ensure!((dominant.0[1] - 1.0).abs() <= 1e-8, "empty level does not dominate: {dominant:?}");

    let index = index_with_levels([8, 4, 4, 2], 5);
    let ratios = [index.ratios(Disease::Dandruff, DEFAULT_EPSILON), SamplingRatios::uniform(), SamplingRatios::uniform()];
    let jobs = 100_000;
    let config = PlanConfig {
        num_jobs: jobs,
        higher_only: false,
        diseases: vec![Disease::Dandruff],
        ..PlanConfig::default()
    };
    let outcome = plan_jobs(&index, &ratios, &config, &mut substream(5, "plan", 0)).map_err(|e| e.to_string())?;
    ensure!(outcome.jobs.len() == jobs, "{} jobs skipped", outcome.skipped.len());
    let mut freq = [0.0; 4];
    for job in &outcome.jobs {
        freq[usize::from(job.target_severity)] += 1.0 / jobs as f64;
    }
    let dev = freq.iter().zip(ninths).map(|(f, e)| (f - e).abs()).fold(0.0, f64::max);
    ensure!(dev <= 0.01, "frequencies {freq:?} deviate by {dev}");
    Ok(format!("hand cases exact, 1e5 draws max deviation {dev:.4}"))
}

fn guidance() -> Outcome {
    let mut rng = StreamRng::seed_from_u64(6);
    let mut round_trip: f64 = 0.0;
    for _ in 0..50 {
        let x0 = random_tensor(&mut rng, 3, 16, 16);
        let eps = random_tensor(&mut rng, 3, 16, 16);
        let ab = rng.gen_range(1e-3..1.0);
        let back = x0_hat(&add_noise(&x0, &eps, ab).unwrap(), &eps, ab).unwrap();
        round_trip = round_trip.max(back.max_abs_diff(&x0));
    }
    ensure!(round_trip <= 1e-6, "round trip error {round_trip:e}");

    let schedule = NoiseSchedule::linear_default();
    for trial in 0..40 {
        let (h, w) = (rng.gen_range(4..24), rng.gen_range(4..24));
        let xt = random_tensor(&mut rng, 3, h, w);
        let eps = random_tensor(&mut rng, 3, h, w);
        let src = random_tensor(&mut rng, 3, h, w);
        let mask = random_mask_in(&mut rng, w, h, 0.0..1.0);
        let preserve = MaskPreservationLoss::l2_only(src, mask.complement());
        let terms = LossTerms {
            style: Some(&ZeroLoss),
            content: Some(&ZeroLoss),
            mask: Some(&preserve),
            semantic: Some(&ZeroLoss),
            range: Some(&ZeroLoss),
        };
        let variant = if trial % 2 == 0 { BlendVariant::Verbatim } else { BlendVariant::Renoise };
        let t = rng.gen_range(1..=schedule.steps());
        let out = guided_reverse_step(&xt, &FixedNoise(eps), &terms, &GuidanceWeights::default(), &mask, &schedule, t, variant)
            .map_err(|e| e.to_string())?;
        for (i, (o, x)) in out.data().iter().zip(xt.data()).enumerate() {
            if mask.cells()[i % (h * w)] != 0 {
                ensure!(o.to_bits() == x.to_bits(), "trial {trial}: masked value {i} changed");
            }
        }
    }

    let src = random_tensor(&mut rng, 3, 64, 64);
    let x = random_tensor(&mut rng, 3, 64, 64);
    let mask = random_mask(&mut rng, 64, 64, 0.4);
    let preserve = MaskPreservationLoss::l2_only(src.clone(), mask.clone());
    let terms = LossTerms {
        style: Some(&ZeroLoss),
        content: Some(&ZeroLoss),
        mask: Some(&preserve),
        semantic: Some(&ZeroLoss),
        range: Some(&ZeroLoss),
    };
    let weights = GuidanceWeights {
        style: 0.0,
        content: 0.0,
        mask: 1.0,
        semantic: 0.0,
        range: 0.0,
        ..GuidanceWeights::default()
    };
    let analytic = total_loss(&x, &terms, &weights).map_err(|e| e.to_string())?;
    let scale = analytic.gradient.data().iter().fold(0.0f64, |m, g| m.max(g.abs()));
    let step = 1e-5;
    let mut probe = x.clone();
    let mut worst: f64 = 0.0;
    for i in 0..x.data().len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + step;
        let up = masked_l2(&src, &probe, &mask).unwrap();
        probe.data_mut()[i] = orig - step;
        let down = masked_l2(&src, &probe, &mask).unwrap();
        probe.data_mut()[i] = orig;
        worst = worst.max(((up - down) / (2.0 * step) - analytic.gradient.data()[i]).abs() / scale);
    }
    ensure!(worst <= 1e-4, "gradient relative error {worst:e}");
    Ok(format!("round trip {round_trip:.1e}, 40 exact blends, gradient error {worst:.1e}"))
}

fn metrics() -> Outcome {
    let mut rng = StreamRng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    for _ in 0..500 {
        let (w, h) = (rng.gen_range(1..40), rng.gen_range(1..40));
        let pred = random_mask_in(&mut rng, w, h, 0.0..1.0);
        let gt = random_mask_in(&mut rng, w, h, 0.0..1.0);
        let e = evaluate(&pred, &gt).map_err(|e| e.to_string())?;
        worst = worst.max((e.dice - 2.0 * e.jaccard / (1.0 + e.jaccard)).abs());
    }
    ensure!(worst <= 1e-12, "identity error {worst:e}");

    // 100 pixels each, 50 shared
    let pred = BinaryMask::from_fn(20, 20, |r, c| r < 5 && c < 20).unwrap();
    let gt = BinaryMask::from_fn(20, 20, |r, c| (r < 5 && c < 10) || (r == 10 && c < 20) || (r == 11 && c < 20) || (r == 12 && c < 10)).unwrap();
    ensure!(pred.count_ones() == 100 && gt.count_ones() == 100, "fixture sizes");
    let e = evaluate(&pred, &gt).unwrap();
    ensure!(e.tp == 50, "overlap is {}", e.tp);
    ensure!(e.jaccard == 50.0 / 150.0 && e.dice == 0.5, "jaccard {} dice {}", e.jaccard, e.dice);
    Ok(format!("500 random pairs within {worst:.0e}, overlap-50 exact"))
}

/// gen-pseudo, then coarse masks simulated from the clean ones, then the
/// mock-backed pipeline. Returns the per-item Dice scores.
fn synthetic_run(root: &Path, seed: u64) -> Result<Vec<f64>, String> {
    let run = |args: &[&str]| -> Result<(), String> {
        let out = common::hairseg(args);
        if out.status.success() {
            Ok(())
        } else {
            Err(format!("hairseg {}: {}", args[0], String::from_utf8_lossy(&out.stderr)))
        }
    };
    let s = |p: &Path| p.to_str().unwrap().to_string();
    let (patches, gen, coarse, out) = (root.join("patches"), root.join("gen"), root.join("coarse"), root.join("out"));
    common::write_patches(&patches, 5, 128, seed);
    run(&["gen-pseudo", "--patches", &s(&patches), "--count", "50", "--seed", &seed.to_string(), "--out", &s(&gen), "--workers", "1"])?;
    for i in 0..50 {
        let name = format!("msk_{i:05}.png");
        let clean = io::read_mask(&gen.join(&name), true).map_err(|e| e.to_string())?;
        let mut rng = substream(seed, "coarse", i);
        let noisy = simulate_coarse_mask(&clean, 20, (1, 4), &mut rng);
        io::write_mask(&coarse.join(&name), &noisy).map_err(|e| e.to_string())?;
    }
    run(&[
        "pipeline", "--coarse", &s(&coarse), "--gt", &s(&gen), "--images", &s(&gen), "--out", &s(&out),
        "--seed", &seed.to_string(), "--workers", "1", "--backend", "mock",
    ])?;
    let report: PipelineReport = io::read_json(&out.join("summary.json")).map_err(|e| e.to_string())?;
    Ok(report.items.iter().map(|i| i.dice.unwrap_or(f64::NAN)).collect())
}

fn end_to_end(dir: &Path) -> Outcome {
    let dice = synthetic_run(dir, 2024)?;
    ensure!(dice.len() == 50, "{} items scored", dice.len());
    let (worst_i, worst) = dice
        .iter()
        .copied()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap();
    let below = dice.iter().filter(|d| d.is_nan() || **d < 0.95).count();
    let mean = dice.iter().sum::<f64>() / 50.0;
    ensure!(below == 0, "{below} of 50 below 0.95, worst {worst:.4} (item {worst_i})");
    Ok(format!("50 images, min Dice {worst:.4}, mean {mean:.4}"))
}

fn determinism(first: &Path, dir: &Path) -> Outcome {
    synthetic_run(dir, 2024)?;
    let a = common::snapshot(first);
    let b = common::snapshot(dir);
    ensure!(a.len() == b.len(), "{} vs {} files", a.len(), b.len());
    for ((pa, ba), (pb, bb)) in a.iter().zip(&b) {
        ensure!(pa == pb && ba == bb, "{} differs", pa.display());
    }
    Ok(format!("{} files byte-identical", a.len()))
}

fn main() {
    let first = TempDir::new().unwrap();
    let second = TempDir::new().unwrap();
    let checks: Vec<Check> = vec![
        (1, "morphology", Duration::from_secs(1), Box::new(morphology)),
        (2, "skeleton reconstruction", Duration::from_secs(10), Box::new(reconstruction)),
        (3, "mean point oracle", Duration::MAX, Box::new(mean_points)),
        (4, "nms contract", Duration::MAX, Box::new(nms_contract)),
        (5, "sampling ratios", Duration::MAX, Box::new(sampling)),
        (6, "guidance", Duration::from_secs(30), Box::new(guidance)),
        (7, "metrics", Duration::MAX, Box::new(metrics)),
        (8, "end-to-end synthetic", Duration::from_secs(60), Box::new(|| end_to_end(first.path()))),
        (9, "determinism", Duration::MAX, Box::new(|| determinism(first.path(), second.path()))),
    ];
    let mut failed = 0;
    for (n, name, budget, check) in checks {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(&check)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        let took = start.elapsed();
        let result = match result {
            Ok(detail) if took > budget => Err(format!("{detail}; over the {budget:?} budget")),
            r => r,
        };
        let (status, detail) = match &result {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        failed += usize::from(result.is_err());
        println!("criterion {n} [{name}] {status} ({:.2}s): {detail}", took.as_secs_f64());
    }
    let _ = fs::remove_dir_all(first.path().join("patches"));
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
    println!("all 9 criteria passed");
}
