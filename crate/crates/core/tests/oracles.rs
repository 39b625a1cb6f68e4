//! Checks against independent reference computations: central finite
//! differences, exact rational arithmetic and Monte-Carlo frequencies.

use hairseg_core::guidance::{
    add_noise, guided_reverse_step, masked_l2, run_reverse, total_loss, BlendVariant, FixedNoise,
    GuidanceWeights, ImageTensor, LossTerms, MaskPreservationLoss, NoiseSchedule, ZeroDenoiser,
    ZeroLoss,
};
use hairseg_core::planner::{
    plan_jobs, post_plan_distribution, sampling_ratios, Disease, LabelIndex, LabelRecord, PlanConfig,
    SamplingRatios, SeverityCounts, DEFAULT_EPSILON,
};
use hairseg_core::rng::{substream, StreamRng};
use hairseg_core::BinaryMask;
use num::{BigInt, BigRational, ToPrimitive};
use rand::{Rng, SeedableRng};

fn random_tensor(rng: &mut StreamRng, c: usize, h: usize, w: usize) -> ImageTensor {
    ImageTensor::from_fn(c, h, w, |_, _, _| rng.gen_range(-1.0..1.0))
}

fn random_mask(rng: &mut StreamRng, w: usize, h: usize, p: f64) -> BinaryMask {
    BinaryMask::from_fn(w, h, |_, _| rng.gen_bool(p)).unwrap()
}

#[test]
fn mask_gradient_matches_central_differences() {
    let mut rng = StreamRng::seed_from_u64(11);
    let (c, h, w) = (3, 64, 64);
    let src = random_tensor(&mut rng, c, h, w);
    let x = random_tensor(&mut rng, c, h, w);
    let mask = random_mask(&mut rng, w, h, 0.4);
    let preserve = MaskPreservationLoss::l2_only(src.clone(), mask.clone());
    let zero = ZeroLoss;
    let terms = LossTerms {
        style: Some(&zero),
        content: Some(&zero),
        mask: Some(&preserve),
        semantic: Some(&zero),
        range: Some(&zero),
    };
    let weights = GuidanceWeights {
        style: 0.0,
        content: 0.0,
        mask: 1.0,
        semantic: 0.0,
        range: 0.0,
        ..GuidanceWeights::default()
    };
    let analytic = total_loss(&x, &terms, &weights).unwrap();
    assert!((analytic.value - masked_l2(&src, &x, &mask).unwrap()).abs() < 1e-12);

    let step = 1e-5;
    let mut probe = x.clone();
    let mut worst: f64 = 0.0;
    let scale = analytic.gradient.data().iter().fold(0.0f64, |m, g| m.max(g.abs()));
    for i in 0..x.data().len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + step;
        let up = masked_l2(&src, &probe, &mask).unwrap();
        probe.data_mut()[i] = orig - step;
        let down = masked_l2(&src, &probe, &mask).unwrap();
        probe.data_mut()[i] = orig;
        let fd = (up - down) / (2.0 * step);
        worst = worst.max((fd - analytic.gradient.data()[i]).abs() / scale);
    }
    assert!(worst <= 1e-4, "relative error {worst}");
}

#[test]
fn doubling_weights_doubles_loss() {
    let mut rng = StreamRng::seed_from_u64(3);
    let src = random_tensor(&mut rng, 2, 8, 8);
    let trg = random_tensor(&mut rng, 2, 8, 8);
    let x = random_tensor(&mut rng, 2, 8, 8);
    let mask = random_mask(&mut rng, 8, 8, 0.5);
    let preserve = MaskPreservationLoss::l2_only(src, mask);
    let style = hairseg_core::guidance::StyleLoss {
        target: trg,
        lambda_mse: 3.0,
        token_distance: ZeroLoss,
    };
    let terms = LossTerms {
        style: Some(&style),
        content: Some(&ZeroLoss),
        mask: Some(&preserve),
        semantic: Some(&preserve),
        range: Some(&style),
    };
    let w = GuidanceWeights::default();
    let once = total_loss(&x, &terms, &w).unwrap();
    let twice = total_loss(&x, &terms, &w.scaled(2.0)).unwrap();
    assert_eq!(twice.value, 2.0 * once.value);
    assert_eq!(twice.gradient, once.gradient.scale(2.0));
}

#[test]
fn half_plane_blend_branches() {
    let mut rng = StreamRng::seed_from_u64(5);
    let xt = random_tensor(&mut rng, 3, 10, 12);
    let eps = random_tensor(&mut rng, 3, 10, 12);
    let mask = BinaryMask::from_fn(12, 10, |_, c| c < 6).unwrap();
    let schedule = NoiseSchedule::linear(20, 1e-4, 0.1).unwrap();
    let t = 13;
    let out = guided_reverse_step(
        &xt,
        &FixedNoise(eps.clone()),
        &LossTerms::zero(),
        &GuidanceWeights::default(),
        &mask,
        &schedule,
        t,
        BlendVariant::Verbatim,
    )
    .unwrap();
    let ab = schedule.alpha_bar(t);
    for ch in 0..3 {
        for r in 0..10 {
            for c in 0..12 {
                if c < 6 {
                    assert_eq!(out.get(ch, r, c).to_bits(), xt.get(ch, r, c).to_bits());
                } else {
                    let expected = (xt.get(ch, r, c) - (1.0 - ab).sqrt() * eps.get(ch, r, c)) / ab.sqrt();
                    assert!((out.get(ch, r, c) - expected).abs() < 1e-12);
                }
            }
        }
    }
}

#[test]
fn trivial_blend_cases() {
    let mut rng = StreamRng::seed_from_u64(8);
    let xt = random_tensor(&mut rng, 3, 6, 6);
    let schedule = NoiseSchedule::new(vec![1.0, 1.0, 0.5]).unwrap();
    let full = BinaryMask::filled(6, 6).unwrap();
    let none = BinaryMask::new(6, 6).unwrap();
    let step = |mask: &BinaryMask, t| {
        guided_reverse_step(
            &xt,
            &ZeroDenoiser,
            &LossTerms::zero(),
            &GuidanceWeights::default(),
            mask,
            &schedule,
            t,
            BlendVariant::Verbatim,
        )
        .unwrap()
    };
    assert_eq!(step(&full, 2), xt);
    assert_eq!(step(&none, 1), xt);
    assert!(guided_reverse_step(
        &xt,
        &ZeroDenoiser,
        &LossTerms::zero(),
        &GuidanceWeights::default(),
        &none,
        &schedule,
        0,
        BlendVariant::Verbatim,
    )
    .is_err());
}

#[test]
fn full_run_with_exact_noise_recovers_clean_image() {
    let mut rng = StreamRng::seed_from_u64(21);
    let x0 = random_tensor(&mut rng, 3, 16, 16);
    let eps = random_tensor(&mut rng, 3, 16, 16);
    let mask = random_mask(&mut rng, 16, 16, 0.3);
    for schedule in [NoiseSchedule::linear_default(), NoiseSchedule::cosine(200, 0.008).unwrap()] {
        let xt = add_noise(&x0, &eps, schedule.alpha_bar(schedule.steps())).unwrap();
        let out = run_reverse(
            &xt,
            &FixedNoise(eps.clone()),
            &LossTerms::zero(),
            &GuidanceWeights::default(),
            &mask,
            &schedule,
            BlendVariant::Renoise,
        )
        .unwrap();
        let plane = 256;
        for (i, ((&o, &x), &start)) in out.data().iter().zip(x0.data()).zip(xt.data()).enumerate() {
            if mask.cells()[i % plane] != 0 {
                assert_eq!(o.to_bits(), start.to_bits());
            } else {
                assert!((o - x).abs() <= 1e-4, "pixel {i}: {o} vs {x}");
            }
        }
    }
}

fn rational_ratios(counts: &[u64; 4]) -> [f64; 4] {
    let eps = BigRational::new(BigInt::from(1), BigInt::from(1_000_000_000u64));
    let inv: Vec<BigRational> = counts
        .iter()
        .map(|&c| (BigRational::from_integer(BigInt::from(c)) + &eps).recip())
        .collect();
    let total = inv.iter().fold(BigRational::from_integer(BigInt::from(0)), |a, b| a + b);
    let mut out = [0.0; 4];
    for (o, v) in out.iter_mut().zip(&inv) {
        *o = (v / &total).to_f64().unwrap();
    }
    out
}

#[test]
fn ratios_match_exact_rationals() {
    let mut rng = StreamRng::seed_from_u64(99);
    let mut cases = vec![[10, 10, 10, 10], [4, 2, 2, 1], [1, 0, 1, 1], [0, 0, 0, 0], [1000, 0, 0, 3]];
    for _ in 0..500 {
        cases.push([0; 4].map(|_: u64| rng.gen_range(0..10_000)));
    }
    for counts in cases {
        let got = sampling_ratios(&SeverityCounts(counts), DEFAULT_EPSILON);
        let exact = rational_ratios(&counts);
        for (g, e) in got.0.iter().zip(&exact) {
            assert!((g - e).abs() <= 1e-12, "{counts:?}: {g} vs {e}");
        }
    }
    let dominant = sampling_ratios(&SeverityCounts([1, 0, 1, 1]), DEFAULT_EPSILON);
    assert!((dominant.0[1] - 1.0).abs() <= 1e-8);
}

fn skewed_index(per_level: [usize; 4], seed: u64) -> LabelIndex {
    let mut rng = StreamRng::seed_from_u64(seed);
    let mut records = Vec::new();
    for (level, &n) in per_level.iter().enumerate() {
        for _ in 0..n {
            let pick = |rng: &mut StreamRng| {
                let u = rng.gen_range(0..per_level.iter().sum::<usize>());
                let mut acc = 0;
                for (l, &m) in per_level.iter().enumerate() {
                    acc += m;
                    if u < acc {
                        return l as u8;
                    }
                }
                3
            };
            let id = format!("img{:04}", records.len());
            let sebum = pick(&mut rng);
            let erythema = pick(&mut rng);
            records.push(LabelRecord {
                id,
                severities: [level as u8, sebum, erythema],
            });
        }
    }
    LabelIndex::new(records).unwrap()
}

#[test]
fn target_frequencies_follow_ratios() {
    // every cell holds several images, so excluding the source never biases a draw
    let index = skewed_index([8, 4, 4, 2], 1);
    let ratios = index.ratios(Disease::Dandruff, DEFAULT_EPSILON);
    let expected = [1.0 / 9.0, 2.0 / 9.0, 2.0 / 9.0, 4.0 / 9.0];
    for (r, e) in ratios.0.iter().zip(&expected) {
        assert!((r - e).abs() <= 1e-9);
    }
    let config = PlanConfig {
        num_jobs: 100_000,
        higher_only: false,
        diseases: vec![Disease::Dandruff],
        ..PlanConfig::default()
    };
    let all = [ratios, SamplingRatios::uniform(), SamplingRatios::uniform()];
    let outcome = plan_jobs(&index, &all, &config, &mut substream(7, "plan", 0)).unwrap();
    assert!(outcome.skipped.is_empty());
    assert_eq!(outcome.jobs.len(), 100_000);
    let mut freq = [0.0; 4];
    for job in &outcome.jobs {
        assert_ne!(job.source_id, job.target_id);
        assert_eq!(index.get(&job.target_id).unwrap().severities[0], job.target_severity);
        freq[usize::from(job.target_severity)] += 1.0 / 100_000.0;
    }
    for (f, e) in freq.iter().zip(&expected) {
        assert!((f - e).abs() <= 0.01, "{freq:?}");
    }
}

#[test]
fn planning_rebalances_and_is_deterministic() {
    let index = skewed_index([60, 25, 10, 5], 2);
    let ratios = Disease::ALL.map(|d| index.ratios(d, DEFAULT_EPSILON));
    let config = PlanConfig {
        num_jobs: 10_000,
        ..PlanConfig::default()
    };
    let outcome = plan_jobs(&index, &ratios, &config, &mut substream(3, "plan", 0)).unwrap();
    let again = plan_jobs(&index, &ratios, &config, &mut substream(3, "plan", 0)).unwrap();
    assert_eq!(outcome, again);
    assert_eq!(outcome.jobs.len() + outcome.skipped.len(), 10_000);
    for job in &outcome.jobs {
        let src = index.get(&job.source_id).unwrap();
        assert!(job.target_severity > src.severity(job.disease));
    }
    let after = post_plan_distribution(&index, &outcome.jobs).unwrap();
    for d in Disease::ALL {
        let before = index.counts(d);
        assert!(
            after[d.index()].imbalance() <= before.imbalance(),
            "{d}: {:?} -> {:?}",
            before,
            after[d.index()]
        );
    }
}
