//! Acceptance suite. Prints one PASS/FAIL/SKIP line per criterion and exits non-zero if any
//! criterion fails.
//!
//! Optional dataset roots: `CMFD_GRIP_ROOT` (grip layout), `CMFD_CMH_ROOT` (cmh layout) and
//! `CMFD_CMH_GROUP4` (directory of the fourth CMH group, used for the recall study).

use std::collections::BTreeSet;
use std::path::PathBuf;
use std::time::Instant;

use cmfd::analysis::{detection_ratio, recall_vs_bruteforce, step4_sweep};
use cmfd::descriptor::{Descriptor, DESCRIPTOR_LEN};
use cmfd::entropy::compute_entropy_map;
use cmfd::evaluation::{confusion_pixels, load_combined, load_dataset, metrics, run_benchmark, ConfusionCounts, Layout};
use cmfd::forge::{synthetic_forgery, synthetic_texture, CloneKind};
use cmfd::image_io::{load_gray, to_grayscale};
use cmfd::localization::{ransac_points, AffineTransform, RansacParams};
use cmfd::matcher::{build_groups, entropy_group_count, gray_group_count, match_all, ClusterParams, MatchMode, MatchParams};
use cmfd::pipeline::{detect, extract_features, Features, Timings};
use cmfd::scale_space::Keypoint;
use cmfd::{Config, DetectionSource, GrayImage, RgbImage};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

fn verdict(ok: bool, detail: String) -> Outcome {
    if ok {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

fn random_gray(rng: &mut ChaCha8Rng, w: usize, h: usize) -> GrayImage {
    // mix of full-range noise, few-level noise and flat patches so windows see every regime
    let levels: u8 = *[2u8, 5, 17, 255].choose(rng).unwrap();
    let flat_x = rng.gen_range(0..w);
    GrayImage::from_fn(w, h, |x, _| {
        if x < flat_x / 3 {
            90
        } else {
            (rng.gen_range(0..=levels as u32) * 255 / levels as u32) as u8
        }
    })
}

/// Straight per-pixel histogram entropy with the window clipped to the image.
fn oracle_entropy(img: &GrayImage, r: usize, x: usize, y: usize) -> f64 {
    let mut hist = [0u32; 256];
    let mut n = 0u32;
    for yy in y.saturating_sub(r)..=(y + r).min(img.height() - 1) {
        for xx in x.saturating_sub(r)..=(x + r).min(img.width() - 1) {
            hist[img.get(xx, yy) as usize] += 1;
            n += 1;
        }
    }
    let mut h = 0.0;
    for &c in &hist {
        if c > 0 {
            let p = c as f64 / n as f64;
            h -= p * p.log2();
        }
    }
    h
}

fn criterion_1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let img = random_gray(&mut rng, 128, 128);
        let map = compute_entropy_map::<f64>(&img, 3).unwrap();
        for y in 0..128 {
            for x in 0..128 {
                worst = worst.max((map.get(x, y) - oracle_entropy(&img, 3, x, y)).abs());
            }
        }
    }
    let big = synthetic_texture(2048, 1536, 2);
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let t = Instant::now();
    pool.install(|| compute_entropy_map::<f64>(&big, 3).unwrap());
    let secs = t.elapsed().as_secs_f64();
    verdict(
        worst <= 1e-9 && secs < 2.0,
        format!("max |error| {worst:.3e} bits (<= 1e-9); 2048x1536 single thread {secs:.2}s (< 2s)"),
    )
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut mismatches = 0;
    for _ in 0..5 {
        let img = random_gray(&mut rng, 96, 80);
        let base = compute_entropy_map::<f64>(&img, 3).unwrap();
        for _ in 0..10 {
            let mut perm: Vec<u8> = (0..=255).collect();
            perm.shuffle(&mut rng);
            let mapped = GrayImage::from_fn(96, 80, |x, y| perm[img.get(x, y) as usize]);
            if compute_entropy_map::<f64>(&mapped, 3).unwrap().field() != base.field() {
                mismatches += 1;
            }
        }
    }
    verdict(mismatches == 0, format!("{mismatches} of 50 permuted maps differ"))
}

fn kp(x: f64, y: f64, gray: u8, entropy: f64) -> Keypoint<f64> {
    let mut k = Keypoint::new(x, y, 1.6);
    k.gray_value = gray;
    k.entropy_value = entropy;
    k
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut failures = Vec::new();
    let entropy_grid: Vec<f64> = (0..=140).map(|k| k as f64 * 0.05).collect();
    let mut grid = Vec::new();
    for g in 0..=255u8 {
        for &e in &entropy_grid {
            grid.push(kp(0.0, 0.0, g, e));
        }
    }
    for t in 0..50 {
        let step1: u32 = rng.gen_range(2..=255);
        let step2: u32 = rng.gen_range(0..step1);
        let step3: f64 = [rng.gen_range(0.1..7.5), 0.5, 1.0, 2.0][t % 4];
        let step4: f64 = [rng.gen_range(0.0..1.0), 0.0, 0.2, 0.05][t % 4];
        let nu = ((255.0 - step1 as f64) / (step1 - step2) as f64).ceil() as i64 + 1;
        let nv = ((7.0 - step4) / step3).ceil() as i64;
        let (nu, nv) = (nu.max(1) as usize, nv.max(1) as usize);
        if gray_group_count(step1, step2).unwrap() != nu || entropy_group_count(step3, step4).unwrap() != nv {
            failures.push(format!("count ({step1},{step2},{step3},{step4})"));
            continue;
        }
        let params = ClusterParams { step1, step2, step3, step4 };
        let groups = build_groups(&grid, &params, MatchMode::Clustered).unwrap();
        if groups.len() != nu * nv {
            failures.push(format!("group total ({step1},{step2},{step3},{step4})"));
            continue;
        }
        let mut membership: Vec<Vec<usize>> = vec![Vec::new(); grid.len()];
        for (gi, g) in groups.iter().enumerate() {
            for &m in &g.members {
                membership[m].push(gi);
            }
        }
        if let Some(k) = membership.iter().position(|m| m.is_empty()) {
            failures.push(format!("uncovered {:?} in ({step1},{step2},{step3},{step4})", (grid[k].gray_value, grid[k].entropy_value)));
            continue;
        }
        let ne = entropy_grid.len();
        let shares = |a: usize, b: usize| membership[a].iter().any(|g| membership[b].contains(g));
        let mut bad = 0;
        for _ in 0..20_000 {
            let g = rng.gen_range(0..=255i32);
            let dg = rng.gen_range(-(step2 as i32)..=step2 as i32);
            let g2 = (g + dg).clamp(0, 255);
            let e = rng.gen_range(0..ne);
            let max_de = (step4 / 0.05 + 1e-9).floor() as i64;
            let de = rng.gen_range(-max_de..=max_de);
            let e2 = (e as i64 + de).clamp(0, ne as i64 - 1) as usize;
            let a = g as usize * ne + e;
            let b = g2 as usize * ne + e2;
            if !shares(a, b) {
                bad += 1;
            }
        }
        if bad > 0 {
            failures.push(format!("{bad} overlap violations in ({step1},{step2},{step3},{step4})"));
        }
    }
    verdict(failures.is_empty(), if failures.is_empty() { "50 tuples: counts, coverage and overlap hold".into() } else { failures.join("; ") })
}

/// Straight-line g2NN over every non-degenerate descriptor.
fn oracle_g2nn(kps: &[Keypoint<f64>], descs: &[Descriptor<f64>], ratio: f64, min_dist: f64) -> BTreeSet<(usize, usize)> {
    let mut out = BTreeSet::new();
    let active: Vec<usize> = (0..descs.len()).filter(|&i| !descs[i].is_degenerate()).collect();
    if active.len() < 3 {
        return out;
    }
    for &q in &active {
        let mut d: Vec<(f64, usize)> = Vec::new();
        for &c in &active {
            if c == q {
                continue;
            }
            let mut s = 0.0;
            for k in 0..DESCRIPTOR_LEN {
                let t = descs[q].values()[k] - descs[c].values()[k];
                s += t * t;
            }
            d.push((s.sqrt(), c));
        }
        d.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        let mut i = 0;
        while i + 1 < d.len() && d[i].0 < ratio * d[i + 1].0 {
            let c = d[i].1;
            let dx = kps[q].x - kps[c].x;
            let dy = kps[q].y - kps[c].y;
            if (dx * dx + dy * dy).sqrt() >= min_dist {
                out.insert((q.min(c), q.max(c)));
            }
            i += 1;
        }
    }
    out
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let params = MatchParams::<f64>::default();
    let mut mismatched = 0;
    let mut total_pairs = 0;
    for _ in 0..30 {
        let n = rng.gen_range(3..=200);
        let mut kps: Vec<Keypoint<f64>> = Vec::new();
        let mut descs: Vec<Descriptor<f64>> = Vec::new();
        for k in 0..n {
            let clone_of = (k > 0 && rng.gen_bool(0.4)).then(|| rng.gen_range(0..k));
            let hist: Vec<f64> = match clone_of {
                Some(src) => descs[src].values().iter().map(|v| v + rng.gen_range(0.0..0.01)).collect(),
                None => (0..DESCRIPTOR_LEN).map(|_| rng.gen_range(0.0..1.0)).collect(),
            };
            let d = if rng.gen_bool(0.03) { Descriptor::zero() } else { Descriptor::from_histogram(hist) };
            let (x, y) = match clone_of {
                Some(src) if rng.gen_bool(0.2) => (kps[src].x + rng.gen_range(0.0..12.0), kps[src].y),
                _ => (rng.gen_range(0.0..600.0), rng.gen_range(0.0..600.0)),
            };
            kps.push(kp(x, y, rng.gen(), rng.gen_range(0.0..7.0)));
            descs.push(d);
        }
        let got: BTreeSet<_> = match_all(&kps, &descs, &ClusterParams::default(), &params, MatchMode::BruteForce)
            .unwrap()
            .pairs
            .iter()
            .map(|p| (p.i, p.j))
            .collect();
        let want = oracle_g2nn(&kps, &descs, 0.5, 10.0);
        total_pairs += want.len();
        if got != want {
            mismatched += 1;
        }
    }
    verdict(mismatched == 0, format!("{mismatched} of 30 sets differ ({total_pairs} oracle pairs)"))
}

struct StudyImage {
    name: String,
    features: Features<f32>,
}

fn study_corpus(cfg: &Config) -> (Vec<StudyImage>, bool) {
    if let Some(dir) = std::env::var_os("CMFD_CMH_GROUP4").map(PathBuf::from) {
        if let Ok(entries) = load_dataset(&dir, Layout::Cmh) {
            let imgs: Vec<_> = entries
                .iter()
                .filter(|e| e.tampered)
                .filter_map(|e| {
                    let gray = load_gray(&e.image).ok()?;
                    let features = extract_features::<f32>(&gray, cfg, &mut Timings::default()).ok()?;
                    Some(StudyImage { name: e.image.display().to_string(), features })
                })
                .collect();
            if !imgs.is_empty() {
                return (imgs, true);
            }
        }
    }
    let kinds = [
        CloneKind::Translation,
        CloneKind::Rotation(10.0),
        CloneKind::Rotation(30.0),
        CloneKind::Rotation(90.0),
        CloneKind::Scale(0.8),
        CloneKind::Scale(1.25),
    ];
    let imgs = (0..10)
        .map(|k| {
            let (f, _) = synthetic_forgery(512, 64, kinds[k % kinds.len()], 700 + k as u64).unwrap();
            let gray = to_grayscale(&f.image);
            StudyImage {
                name: format!("synthetic-{k}"),
                features: extract_features::<f32>(&gray, cfg, &mut Timings::default()).unwrap(),
            }
        })
        .collect();
    (imgs, false)
}

fn criteria_5_6() -> (Outcome, Outcome) {
    let cfg = Config::default();
    let t = Instant::now();
    let (corpus, dataset) = study_corpus(&cfg);
    let sweep = step4_sweep(0.5, 0.01);
    let (lo, hi) = if dataset { (0.78, 0.97) } else { (0.75, 0.95) };

    let mut brute_total = 0.0;
    let mut hit_0 = 0.0;
    let mut hit_02 = 0.0;
    let mut study_secs = 0.0;
    let mut monotone_failures = Vec::new();
    let at = |curve: &cmfd::analysis::RecallCurve, s4: f64| {
        curve.points.iter().find(|p| (p.0 - s4).abs() < 1e-9).map(|p| p.1).unwrap()
    };
    for img in &corpus {
        let f = &img.features;
        let start = Instant::now();
        let Ok(curve) = recall_vs_bruteforce(&f.keypoints, &f.descriptors, &cfg, &sweep) else {
            continue;
        };
        study_secs += start.elapsed().as_secs_f64();
        let n = curve.brute_force_matches as f64;
        brute_total += n;
        hit_0 += at(&curve, 0.0) * n;
        hit_02 += at(&curve, 0.2) * n;
        if let Some(w) = curve.points.windows(2).find(|w| w[1].1 < w[0].1) {
            monotone_failures.push(format!("{}: {:?} -> {:?}", img.name, w[0], w[1]));
        }
    }
    let feature_secs = t.elapsed().as_secs_f64();
    let (r0, r02) = (hit_0 / brute_total, hit_02 / brute_total);
    let source = if dataset { "dataset" } else { "synthetic" };
    let c5 = verdict(
        brute_total > 0.0 && r0 >= lo && r02 >= hi && study_secs < 300.0,
        format!(
            "{source} corpus of {}: recall {r0:.4} at step4=0 (>= {lo}), {r02:.4} at step4=0.2 (>= {hi}), pooled over {brute_total} brute-force matches; study {study_secs:.1}s (< 300s)",
            corpus.len()
        ),
    );
    let c6 = verdict(
        monotone_failures.is_empty(),
        if monotone_failures.is_empty() {
            format!("{} sweeps of {} points non-decreasing ({feature_secs:.1}s with feature extraction)", corpus.len(), sweep.len())
        } else {
            monotone_failures.join("; ")
        },
    );
    (c5, c6)
}

fn criterion_7() -> Outcome {
    let cfg = Config::default();
    let t = Instant::now();
    let kinds = [
        CloneKind::Translation,
        CloneKind::Rotation(10.0),
        CloneKind::Rotation(30.0),
        CloneKind::Rotation(90.0),
        CloneKind::Scale(0.8),
        CloneKind::Scale(1.25),
    ];
    let mut pixels = ConfusionCounts::default();
    let mut detected = 0;
    for k in 0..20 {
        let (f, _) = synthetic_forgery(512, 64, kinds[k % kinds.len()], 100 + k as u64).unwrap();
        let d = detect::<f32>(&f.image, &cfg).unwrap();
        detected += usize::from(d.tampered());
        pixels = pixels + confusion_pixels(d.mask(), &f.mask).unwrap();
    }
    let mut false_alarms = 0;
    for k in 0..20 {
        let img = RgbImage::from_gray(&synthetic_texture(512, 512, 5000 + k));
        false_alarms += usize::from(detect::<f32>(&img, &cfg).unwrap().tampered());
    }
    let secs = t.elapsed().as_secs_f64();
    let tpr = detected as f64 / 20.0;
    let fpr = false_alarms as f64 / 20.0;
    let f = metrics(&pixels).f.unwrap_or(0.0);
    verdict(
        tpr == 1.0 && f >= 0.85 && fpr == 0.0 && secs < 600.0,
        format!("TPR {tpr:.2} (= 1), pixel F {f:.4} (>= 0.85), FPR {fpr:.2} (= 0), {secs:.1}s (< 600s)"),
    )
}

fn criterion_8() -> Outcome {
    let grip = std::env::var_os("CMFD_GRIP_ROOT").map(PathBuf::from);
    let cmh = std::env::var_os("CMFD_CMH_ROOT").map(PathBuf::from);
    let Some(grip) = grip.filter(|p| p.is_dir()) else {
        return Outcome::Skip("CMFD_GRIP_ROOT not set; dataset reproduction skipped".into());
    };
    let cfg = Config::default();
    let entries = match load_dataset(&grip, Layout::Grip) {
        Ok(e) if !e.is_empty() => e,
        Ok(_) => return Outcome::Fail("GRIP root holds no images".into()),
        Err(e) => return Outcome::Fail(format!("GRIP: {e}")),
    };
    let report = run_benchmark::<f32>(&entries, &cfg, 0).unwrap();
    let fi = report.f_image.unwrap_or(0.0) * 100.0;
    let fp = report.f_pixel.unwrap_or(0.0) * 100.0;
    let mut ok = (fi - 100.0).abs() <= 1.0 && (fp - 95.47).abs() <= 4.0;
    let mut detail = format!("GRIP F-i {fi:.2} (100 +- 1), F-p {fp:.2} (95.47 +- 4)");
    if let Some(cmh) = cmh.filter(|p| p.is_dir()) {
        match load_combined(&cmh, &grip) {
            Ok(entries) => {
                let r = run_benchmark::<f32>(&entries, &cfg, 0).unwrap();
                let fp = r.f_pixel.unwrap_or(0.0) * 100.0;
                ok &= (fp - 92.47).abs() <= 4.0;
                detail.push_str(&format!("; CMH+GRIP originals F-p {fp:.2} (92.47 +- 4)"));
            }
            Err(e) => {
                ok = false;
                detail.push_str(&format!("; CMH: {e}"));
            }
        }
    }
    verdict(ok, detail)
}

fn criterion_9() -> Outcome {
    let cfg = Config::default();
    let mut rows = Vec::new();
    let mut all_higher = true;
    let (mut se, mut sg) = (0.0, 0.0);
    for k in 0..4u64 {
        let gray = synthetic_texture(384, 384, 900 + k);
        let e = detection_ratio::<f32>(&gray, &cfg, DetectionSource::Entropy, 16).unwrap();
        let g = detection_ratio::<f32>(&gray, &cfg, DetectionSource::Gray, 16).unwrap();
        all_higher &= e > g;
        se += e;
        sg += g;
        rows.push(format!("{e:.3}/{g:.3}"));
    }
    verdict(
        all_higher,
        format!(
            "entropy/gray ratios {} ; mean {:.4} vs {:.4} (gray baseline reported only)",
            rows.join(" "),
            se / 4.0,
            sg / 4.0
        ),
    )
}

fn random_affine(rng: &mut ChaCha8Rng) -> AffineTransform<f64> {
    let mut t = AffineTransform::similarity(
        rng.gen_range(-180.0..180.0),
        rng.gen_range(0.7..1.4),
        rng.gen_range(-200.0..200.0),
        rng.gen_range(-200.0..200.0),
    );
    t.linear[0][1] += rng.gen_range(-0.1..0.1);
    t
}

fn criterion_10() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let params = RansacParams::<f64>::default();
    let mut worst_exact = 0.0f64;
    for trial in 0..20 {
        let truth = random_affine(&mut rng);
        let src: Vec<[f64; 2]> = (0..25).map(|_| [rng.gen_range(0.0..800.0), rng.gen_range(0.0..600.0)]).collect();
        let dst: Vec<_> = src.iter().map(|&p| truth.apply(p)).collect();
        let fit = ransac_points(&src, &dst, &RansacParams { seed: trial, ..params });
        worst_exact = worst_exact.max(fit.map_or(f64::INFINITY, |f| f.transform.max_abs_diff(&truth)));
    }
    let mut recovered = 0;
    for trial in 0..100 {
        let truth = random_affine(&mut rng);
        let mut src = Vec::new();
        let mut dst = Vec::new();
        for k in 0..30 {
            let p = [rng.gen_range(0.0..800.0), rng.gen_range(0.0..600.0)];
            if k < 18 {
                let q = truth.apply(p);
                src.push(p);
                dst.push([q[0] + rng.gen_range(-0.5..0.5), q[1] + rng.gen_range(-0.5..0.5)]);
            } else {
                src.push(p);
                dst.push([rng.gen_range(-200.0..1000.0), rng.gen_range(-200.0..800.0)]);
            }
        }
        if let Some(fit) = ransac_points(&src, &dst, &RansacParams { seed: 1000 + trial, ..params }) {
            let m = &fit.transform.linear;
            let ok = (0..2).all(|r| (0..2).all(|c| (m[r][c] - truth.linear[r][c]).abs() <= 1e-2));
            recovered += usize::from(ok);
        }
    }
    verdict(
        worst_exact <= 1e-9 && recovered >= 95,
        format!("noise-free max error {worst_exact:.2e} (<= 1e-9); 40% outliers recovered {recovered}/100 (>= 95)"),
    )
}

fn main() {
    let mut results: Vec<(u32, Outcome)> = vec![
        (1, criterion_1()),
        (2, criterion_2()),
        (3, criterion_3()),
        (4, criterion_4()),
    ];
    let (c5, c6) = criteria_5_6();
    results.push((5, c5));
    results.push((6, c6));
    results.push((7, criterion_7()));
    results.push((8, criterion_8()));
    results.push((9, criterion_9()));
    results.push((10, criterion_10()));

    let mut failed = 0;
    for (n, outcome) in &results {
        let (tag, detail) = match outcome {
            Outcome::Pass(d) => ("PASS", d),
            Outcome::Fail(d) => {
                failed += 1;
                ("FAIL", d)
            }
            Outcome::Skip(d) => ("SKIP", d),
        };
        println!("criterion {n:>2}: {tag} | {detail}");
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
