//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any fail.
//!
//! Run with `cargo test --test acceptance`.

mod common;

use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use cardioprop::io::{decode_mvol, encode_volume, read_nifti1, MvolData};
use cardioprop::metrics::{dice, hausdorff};
use cardioprop::phantom::{generate_cine, generate_frame, PhantomCine, PhantomSpec};
use cardioprop::propagation::{propagate_frame, propagate_series, PropagationResult, Template};
use cardioprop::registration::{
    register_affine, register_rigid, warp_affine, AffineTransform, RegistrationParams,
};
use cardioprop::style::{histogram_match, ks_statistic, vendor_transfer, CdfMapping, ReferenceHistogram, SOURCE_BINS};
use cardioprop::volume::{CineSeries, Geometry, Label, LabelMap, ScalarVolume};
use common::{brute_dice, brute_hausdorff, cli, gaussian_volume, path_str, random_volume, uniform_volume, NiftiFixture};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// Noisy 11-frame cine shared by the propagation criteria.
struct Shared {
    cine: PhantomCine,
    results: Vec<PropagationResult>,
}

fn noisy_cine() -> PhantomCine {
    let base = PhantomSpec::default();
    let spec = PhantomSpec { noise_sigma: 0.1 * base.min_level_gap(), ..base };
    generate_cine(&spec).unwrap()
}

fn registration_recovery() -> Outcome {
    let spec = PhantomSpec::default();
    let fixed = generate_frame(&spec, spec.ed_index).unwrap().0;
    let g = *fixed.geometry();
    let c = g.dims.map(|d| (d as f64 - 1.0) / 2.0);
    let params = RegistrationParams::default();
    let mut times = Vec::new();
    let mut timed = |f: &mut dyn FnMut() -> AffineTransform| {
        let start = Instant::now();
        let t = f();
        times.push(start.elapsed().as_secs_f64());
        t
    };

    // moving(y) = fixed(A^-1 y), so the recovered transform should be A.
    let shift = [3.0, -2.0, 1.0];
    let moving = warp_affine(&fixed, &AffineTransform::translation_only(shift.map(|s| -s)), &g);
    let t = timed(&mut || register_rigid(&fixed, &moving, &params).unwrap());
    let moved = t.apply(c);
    let shift_err = (0..3).map(|a| (moved[a] - c[a] - shift[a]).abs()).fold(0.0, f64::max);

    let inverse_rot = AffineTransform::about_center(AffineTransform::euler_matrix([0.0, 0.0, -5.0]), c, [0.0; 3]);
    let moving = warp_affine(&fixed, &inverse_rot, &g);
    let t = timed(&mut || register_rigid(&fixed, &moving, &params).unwrap());
    let angle_err = (t.z_rotation_degrees() - 5.0).abs();

    let shrink = 1.0 / 1.1;
    let inverse_scale = AffineTransform::about_center([[shrink, 0.0, 0.0], [0.0, shrink, 0.0], [0.0, 0.0, shrink]], c, [0.0; 3]);
    let moving = warp_affine(&fixed, &inverse_scale, &g);
    let rigid = timed(&mut || register_rigid(&fixed, &moving, &params).unwrap());
    let t = timed(&mut || register_affine(&fixed, &moving, &rigid, &params).unwrap());
    let scale_err = (0..3).map(|a| (t.matrix[a][a] - 1.1).abs()).fold(0.0, f64::max);

    let slowest = times.iter().copied().fold(0.0, f64::max);
    check(
        shift_err <= 0.5 && angle_err <= 1.0 && scale_err <= 0.02 && slowest <= 30.0,
        format!(
            "translation error {shift_err:.3} vox (<= 0.5), rotation error {angle_err:.3} deg (<= 1), \
             scale error {scale_err:.4} (<= 0.02), slowest stage {slowest:.1} s (<= 30)"
        ),
    )
}

fn self_propagation(shared: &Shared) -> Outcome {
    let s = &shared.cine.series;
    let mut frames = s.frames.clone();
    frames.insert(s.es_index + 1, s.frames[s.es_index].clone());
    let series = CineSeries { frames, ed_index: s.ed_index + 1, ..s.clone() };
    let r = propagate_frame(&series, s.es_index + 1, &RegistrationParams::default()).unwrap();
    let same = r.pseudo_label.labels().iter().zip(s.es_label.labels()).filter(|(a, b)| a == b).count();
    let agreement = same as f64 / s.es_label.labels().len() as f64;
    check(
        r.chosen_template == Template::Es && agreement >= 0.99,
        format!(
            "chosen {:?}, voxel agreement {:.4} (>= 0.99), es_norm {:.4} mm vs ed_norm {:.4} mm",
            r.chosen_template, agreement, r.es_norm, r.ed_norm
        ),
    )
}

fn template_switching(shared: &Shared) -> Outcome {
    let chosen: Vec<Template> = shared.results.iter().map(|r| r.chosen_template).collect();
    let switches = chosen.windows(2).filter(|w| w[0] != w[1]).count();
    let by_frame = |t: usize| shared.results.iter().find(|r| r.frame_index == t).unwrap().chosen_template;
    let ends = [1, 2].iter().all(|&t| by_frame(t) == Template::Es) && [8, 9].iter().all(|&t| by_frame(t) == Template::Ed);
    let sequence: String = chosen.iter().map(|t| if *t == Template::Es { 'S' } else { 'D' }).collect();
    check(switches <= 1 && ends, format!("frames 1-9 choose {sequence} (S = ES, D = ED), {switches} switch(es)"))
}

fn pseudo_label_quality(shared: &Shared) -> Outcome {
    let mut means = Vec::new();
    for label in Label::FOREGROUND {
        let total: f64 = shared
            .results
            .iter()
            .map(|r| dice(&r.pseudo_label, &shared.cine.ground_truth[r.frame_index], label).unwrap())
            .sum();
        means.push((label, total / shared.results.len() as f64));
    }
    let detail = means.iter().map(|(l, d)| format!("{} {d:.4}", l.name())).collect::<Vec<_>>().join(", ");
    check(means.iter().all(|(_, d)| *d >= 0.90), format!("mean Dice over frames 1-9: {detail} (each >= 0.90)"))
}

fn continuous_volume(kind: usize, seed: u64) -> ScalarVolume {
    let dims = [32, 32, 16];
    match kind % 4 {
        0 => gaussian_volume(dims, 100.0, 10.0, seed),
        1 => uniform_volume(dims, -3.0, 7.0, seed),
        2 => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let exp = Exp::new(0.05).unwrap();
            let g = Geometry::new(dims, [1.0; 3]).unwrap();
            ScalarVolume::with_geometry(g, (0..g.len()).map(|_| exp.sample(&mut rng) as f32).collect()).unwrap()
        }
        _ => {
            let spec = PhantomSpec {
                dims: [32, 32, 32],
                lv_radius_es: 4.0,
                lv_radius_ed: 6.0,
                myo_thickness: 2.0,
                rv_offset: 5.0,
                noise_sigma: 6.0,
                seed,
                ..Default::default()
            };
            generate_frame(&spec, (seed % 11) as usize).unwrap().0
        }
    }
}

fn tied_volume(seed: u64) -> ScalarVolume {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = Geometry::new([12, 10, 8], [1.0; 3]).unwrap();
    ScalarVolume::with_geometry(g, (0..g.len()).map(|_| rng.gen_range(0..7) as f32 * 2.5).collect()).unwrap()
}

fn histogram_matching() -> Outcome {
    let mut worst_ks_ratio = 0.0f64;
    let mut worst_self = 0.0f64;
    let mut monotone_violations = 0;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for i in 0..16u64 {
        let src = continuous_volume(i as usize, 100 + i);
        let refv = continuous_volume(i as usize / 4 + 1, 200 + i);
        let reference = ReferenceHistogram::from_values(refv.voxels().to_vec()).unwrap();
        let matched = histogram_match(&src, &reference).unwrap().volume;
        let bound = 2.0 / SOURCE_BINS as f64 + 2.0 / (src.voxels().len() as f64).sqrt();
        worst_ks_ratio = worst_ks_ratio.max(ks_statistic(matched.voxels(), reference.intensities()) / bound);

        for vol in [&src, &tied_volume(i)] {
            let own = ReferenceHistogram::from_values(vol.voxels().to_vec()).unwrap();
            let out = histogram_match(vol, &own).unwrap().volume;
            let (lo, hi) = vol.min_max();
            let step = (hi - lo) as f64 / SOURCE_BINS as f64;
            let moved = vol.voxels().iter().zip(out.voxels()).map(|(a, b)| (a - b).abs() as f64).fold(0.0, f64::max);
            worst_self = worst_self.max(moved / step);
        }

        let mapping = CdfMapping::new(&src, &reference).unwrap();
        let (lo, hi) = src.min_max();
        for _ in 0..1000 {
            let a = rng.gen_range(lo as f64..hi as f64);
            let b = rng.gen_range(lo as f64..hi as f64);
            let (a, b) = if a <= b { (a, b) } else { (b, a) };
            if mapping.apply(a) > mapping.apply(b) {
                monotone_violations += 1;
            }
        }
    }
    check(
        worst_ks_ratio <= 1.0 && worst_self <= 1.0 && monotone_violations == 0,
        format!(
            "worst KS / bound {worst_ks_ratio:.3} (<= 1), worst self-match shift {worst_self:.3} steps (<= 1), \
             {monotone_violations} monotonicity violations in 16000 pairs"
        ),
    )
}

fn vendor_moments() -> Outcome {
    let mut dataset = Vec::new();
    for i in 0..8 {
        dataset.push((gaussian_volume([32, 32, 12], 100.0, 10.0, i), "A".to_string()));
        dataset.push((gaussian_volume([32, 32, 12], 200.0, 20.0, 1000 + i), "B".to_string()));
    }
    let out = vendor_transfer(&dataset, "A", "B", 8, 17).unwrap();
    let mut worst = (0.0f64, 0.0f64);
    for v in &out {
        let n = v.voxels().len() as f64;
        let mean = v.mean();
        let sd = (v.voxels().iter().map(|&x| (x as f64 - mean).powi(2)).sum::<f64>() / n).sqrt();
        worst.0 = worst.0.max((mean - 200.0).abs());
        worst.1 = worst.1.max((sd - 20.0).abs());
    }
    check(
        out.len() == 8 && worst.0 <= 5.0 && worst.1 <= 5.0,
        format!("{} volumes, worst |mean - 200| {:.3}, worst |sd - 20| {:.3} (each <= 5)", out.len(), worst.0, worst.1),
    )
}

fn random_masks(rng: &mut ChaCha8Rng) -> (LabelMap, LabelMap) {
    let dims = [0; 3].map(|_| rng.gen_range(1..=8usize));
    let choices = [0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 2.0];
    let mut spacing = [0; 3].map(|_| choices[rng.gen_range(0..choices.len())]);
    spacing[rng.gen_range(0..3)] = 2.0;
    let n = dims[0] * dims[1] * dims[2];
    let codes = [0u8, 0, 1, 1, 2, 3];
    let mut draw = || (0..n).map(|_| codes[rng.gen_range(0..codes.len())]).collect::<Vec<u8>>();
    let a = draw();
    let b = draw();
    (LabelMap::new(dims, spacing, a).unwrap(), LabelMap::new(dims, spacing, b).unwrap())
}

fn metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut mismatches = 0;
    let mut scaling_failures = 0;
    for _ in 0..200 {
        let (p, g) = random_masks(&mut rng);
        for label in Label::FOREGROUND {
            let code = label.code();
            if dice(&p, &g, label).unwrap() != brute_dice(&p, &g, code)
                || hausdorff(&p, &g, label).unwrap() != brute_hausdorff(&p, &g, code)
            {
                mismatches += 1;
            }
            for s in [0.5, 2.0, 3.0] {
                let sp = p.spacing().map(|v| v * s);
                let (ps, gs) = (p.with_spacing(sp).unwrap(), g.with_spacing(sp).unwrap());
                if dice(&ps, &gs, label).unwrap() != dice(&p, &g, label).unwrap()
                    || hausdorff(&ps, &gs, label).unwrap() != hausdorff(&p, &g, label).unwrap().map(|h| h * s)
                {
                    scaling_failures += 1;
                }
            }
        }
    }
    check(
        mismatches == 0 && scaling_failures == 0,
        format!("200 mask pairs x 3 classes: {mismatches} oracle mismatches, {scaling_failures} scaling-law failures"),
    )
}

fn io_fidelity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(88);
    let mut mvol_failures = 0;
    for i in 0..100 {
        let dims = [0; 3].map(|_| rng.gen_range(1..=16usize));
        let vol = random_volume(dims, i);
        let ok = match decode_mvol(&encode_volume(&vol).unwrap()).unwrap() {
            MvolData::Scalar(back) => {
                back.spacing() == vol.spacing()
                    && back.dims() == vol.dims()
                    && back.voxels().iter().zip(vol.voxels()).all(|(a, b)| a.to_bits() == b.to_bits())
            }
            MvolData::Label(_) => false,
        };
        if !ok {
            mvol_failures += 1;
        }
    }

    let dir = tempfile::tempdir().unwrap();
    let fixtures: [(&str, NiftiFixture, Vec<f32>); 4] = [
        (
            "int16 scaled",
            NiftiFixture {
                dims: [2, 2, 1],
                pixdim: [1.25, 0.5, 3.0],
                datatype: 4,
                bitpix: 16,
                slope: 2.0,
                inter: 1.0,
                payload: [3i16, -4, 0, 100].iter().flat_map(|v| v.to_le_bytes()).collect(),
            },
            vec![7.0, -7.0, 1.0, 201.0],
        ),
        (
            "uint8",
            NiftiFixture { dims: [3, 1, 1], pixdim: [0.7, 0.7, 8.0], datatype: 2, bitpix: 8, slope: 0.0, inter: 0.0, payload: vec![0, 128, 255] },
            vec![0.0, 128.0, 255.0],
        ),
        (
            "float32",
            NiftiFixture {
                dims: [1, 2, 2],
                pixdim: [1.0, 2.0, 4.0],
                datatype: 16,
                bitpix: 32,
                slope: 0.5,
                inter: -1.0,
                payload: [2.0f32, 4.0, -6.0, 0.25].iter().flat_map(|v| v.to_le_bytes()).collect(),
            },
            vec![0.0, 1.0, -4.0, -0.875],
        ),
        (
            "float64",
            NiftiFixture {
                dims: [2, 1, 1],
                pixdim: [1.5, 1.5, 1.5],
                datatype: 64,
                bitpix: 64,
                slope: 1.0,
                inter: 0.0,
                payload: [1.5f64, -2.5].iter().flat_map(|v| v.to_le_bytes()).collect(),
            },
            vec![1.5, -2.5],
        ),
    ];
    let mut nifti_failures = Vec::new();
    for (name, fixture, expected) in &fixtures {
        let path = dir.path().join(format!("{}.nii", name.replace(' ', "_")));
        fs::write(&path, fixture.bytes()).unwrap();
        let vol = read_nifti1(&path).unwrap();
        let spacing = fixture.pixdim.map(|p| p as f64);
        if vol.voxels() != expected.as_slice() || vol.spacing() != spacing || vol.dims() != fixture.dims.map(|d| d as usize) {
            nifti_failures.push(*name);
        }
    }
    check(
        mvol_failures == 0 && nifti_failures.is_empty(),
        format!(
            "{mvol_failures}/100 MVOL round-trip failures, NIfTI fixtures failing: {}",
            if nifti_failures.is_empty() { "none".to_string() } else { nifti_failures.join(", ") }
        ),
    )
}

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn report_norms(path: &Path) -> Vec<(u64, String, f64, f64)> {
    let report: serde_json::Value = serde_json::from_slice(&fs::read(path).unwrap()).unwrap();
    report["frames"]
        .as_array()
        .unwrap()
        .iter()
        .map(|f| {
            (
                f["frame_index"].as_u64().unwrap(),
                f["chosen_template"].as_str().unwrap().to_string(),
                f["es_norm_mm"].as_f64().unwrap(),
                f["ed_norm_mm"].as_f64().unwrap(),
            )
        })
        .collect()
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let run_pipelines = || {
        let ok = [
            cli(&["phantom", "--out", path_str(&a), "--size", "32", "--frames", "5", "--noise", "6", "--vendor", "A"]),
            cli(&["phantom", "--out", path_str(&b), "--size", "32", "--frames", "5", "--noise", "12", "--seed", "3", "--vendor", "B"]),
        ];
        let (ma, mb) = (a.join("manifest.toml"), b.join("manifest.toml"));
        let hm = dir.path().join("hm");
        let tr = dir.path().join("tr");
        let more = [
            cli(&["histmatch", "--manifest", path_str(&ma), "--manifest", path_str(&mb), "--out", path_str(&hm), "--seed", "4"]),
            cli(&[
                "transfer", "--manifest", path_str(&ma), "--manifest", path_str(&mb), "--from-vendor", "A", "--to-vendor", "B",
                "--out", path_str(&tr), "--n-ref-volumes", "3", "--seed", "5",
            ]),
        ];
        let codes: Vec<i32> = ok.iter().chain(&more).copied().collect();
        let snap = [&a, &b, &hm, &tr].map(|d| snapshot(d));
        for d in [&a, &b, &hm, &tr] {
            fs::remove_dir_all(d).unwrap();
        }
        (codes, snap)
    };
    let (codes1, first) = run_pipelines();
    let (codes2, second) = run_pipelines();
    let byte_identical = first == second;
    let all_ok = codes1.iter().chain(&codes2).all(|&c| c == 0);

    cli(&["phantom", "--out", path_str(&a), "--size", "32", "--frames", "5", "--noise", "6"]);
    let manifest = a.join("manifest.toml");
    let mut reports = Vec::new();
    for workers in ["1", "4"] {
        let out = dir.path().join(format!("prop{workers}"));
        let code = cli(&["--workers", workers, "propagate", "--manifest", path_str(&manifest), "--out", path_str(&out)]);
        if code != 0 {
            return Err(format!("propagate with {workers} worker(s) exited {code}"));
        }
        reports.push(report_norms(&out.join("propagation_report.json")));
    }
    let mut worst = 0.0f64;
    let mut same_choice = reports[0].len() == reports[1].len();
    for (x, y) in reports[0].iter().zip(&reports[1]) {
        same_choice &= x.0 == y.0 && x.1 == y.1;
        worst = worst.max((x.2 - y.2).abs()).max((x.3 - y.3).abs());
    }
    check(
        all_ok && byte_identical && same_choice && worst <= 1e-6,
        format!(
            "phantom/histmatch/transfer reruns byte-identical: {byte_identical}; propagation norms across 1 vs 4 workers \
             differ by at most {worst:.2e} mm (<= 1e-6), same templates: {same_choice}"
        ),
    )
}

fn main() {
    let started = Instant::now();
    let shared = catch_unwind(|| {
        let cine = noisy_cine();
        let results = propagate_series(&cine.series, &RegistrationParams::default()).unwrap();
        Shared { cine, results }
    });

    let mut outcomes: Vec<(usize, &str, Outcome)> = Vec::new();
    let mut run = |n: usize, name: &'static str, f: &dyn Fn() -> Outcome| {
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into());
            Err(format!("panicked: {msg}"))
        });
        outcomes.push((n, name, outcome));
    };
    let needs_shared = |f: fn(&Shared) -> Outcome| -> Outcome {
        match &shared {
            Ok(s) => f(s),
            Err(_) => Err("shared propagation run panicked".into()),
        }
    };

    run(1, "registration recovery", &registration_recovery);
    run(2, "self-propagation identity", &|| needs_shared(self_propagation));
    run(3, "warp-norm template selection", &|| needs_shared(template_switching));
    run(4, "pseudo-label quality", &|| needs_shared(pseudo_label_quality));
    run(5, "histogram matching", &histogram_matching);
    run(6, "vendor transfer moments", &vendor_moments);
    run(7, "metric oracles", &metric_oracles);
    run(8, "I/O fidelity", &io_fidelity);
    run(9, "determinism", &determinism);

    let mut failed = 0;
    for (n, name, outcome) in &outcomes {
        match outcome {
            Ok(detail) => println!("criterion {n} ({name}): PASS: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {n} ({name}): FAIL: {detail}");
            }
        }
    }
    println!(
        "acceptance: {}/{} criteria passed in {:.0} s",
        outcomes.len() - failed,
        outcomes.len(),
        started.elapsed().as_secs_f64()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
