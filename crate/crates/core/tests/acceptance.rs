//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

use std::time::{Duration, Instant};

use cropsight::bands::{compute_ndvi, temporal_difference, BandAssignment};
use cropsight::dataset::{ManifestSummary, Role};
use cropsight::groundtruth::{
    parse_mask, render_mask, threshold_classify, ClassMap, ClassMask, DEFAULT_THRESHOLD, LOSS, OK,
};
use cropsight::metrics::{f1_from_iou, ConfusionMatrix, MetricReport};
use cropsight::raster::{merge_tiles, read_geotiff, tile_raster, write_geotiff, TileGrid};
use cropsight::synth::{
    brute_force_metrics, generate_scene, LossRegion, Profile, SceneSpec, Shape,
};
use cropsight::{GeoRaster, GeoTransform};
use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TILING_BUDGET: Duration = Duration::from_secs(1);
const ORACLE_BUDGET: Duration = Duration::from_secs(30);
const SPLIT_TOLERANCE_PCT: f64 = 0.01;
const F1_TOLERANCE: f64 = 5e-4;
const ORACLE_PAIRS: usize = 1000;
const ROUNDTRIP_RASTERS: usize = 100;

type Outcome = Result<String, String>;

fn check(cond: bool, ok: impl Into<String>, fail: impl Into<String>) -> Outcome {
    if cond {
        Ok(ok.into())
    } else {
        Err(fail.into())
    }
}

fn tiling_arithmetic() -> Outcome {
    let (w, h, ts) = (8987, 7108, 256);
    let grid = TileGrid::for_dims(w, h, ts);
    if grid.padded_dims() != (9216, 7168) || grid.len() != 1008 {
        return Err(format!("grid {:?} -> {:?}", grid, grid.padded_dims()));
    }
    let raster = GeoRaster::<u8>::filled(
        w,
        h,
        3,
        7,
        GeoTransform::north_up(0.0, 0.0, 10.0, -10.0),
        "EPSG:32646",
    )
    .map_err(|e| e.to_string())?;
    let start = Instant::now();
    let tiles = tile_raster(&raster, ts).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let dims_ok = tiles
        .iter()
        .all(|(_, _, t)| t.width() == ts && t.height() == ts);
    check(
        tiles.len() == 1008 && dims_ok && elapsed < TILING_BUDGET,
        format!("8987x7108 -> 9216x7168 -> 1008 tiles of 256x256 in {elapsed:.2?} (budget {TILING_BUDGET:?})"),
        format!("{} tiles, uniform={dims_ok}, {elapsed:.2?} (budget {TILING_BUDGET:?})", tiles.len()),
    )
}

fn split_percentages() -> Outcome {
    let roles = std::iter::repeat_n(Role::Train, 3024)
        .chain(std::iter::repeat_n(Role::Validation, 2772))
        .chain(std::iter::repeat_n(Role::Test, 2430));
    let summary = ManifestSummary::from_roles(roles);
    let expected = [
        (Role::Train, 36.76),
        (Role::Validation, 33.70),
        (Role::Test, 29.54),
    ];
    let got: Vec<f64> = expected
        .iter()
        .map(|(r, _)| summary.share(*r).percent)
        .collect();
    let within = expected
        .iter()
        .zip(&got)
        .all(|((_, want), g)| (g - want).abs() <= SPLIT_TOLERANCE_PCT);
    let sum: f64 = got.iter().sum();
    check(
        summary.total == 8226 && within && (sum - 100.0).abs() < 1e-9,
        format!(
            "{:.2}% / {:.2}% / {:.2}% of {} (tol {SPLIT_TOLERANCE_PCT}%)",
            got[0], got[1], got[2], summary.total
        ),
        format!("got {got:?} of {}", summary.total),
    )
}

/// (IoU, F1) per class column of the published evaluation tables:
/// overall, 2019, 2020, 2021, each for RGB then FCI.
const TABLE_PAIRS: [(f64, f64); 24] = [
    (0.9991, 0.9995),
    (0.4085, 0.5801),
    (0.9045, 0.9498),
    (0.9994, 0.9997),
    (0.5154, 0.6802),
    (0.9162, 0.9563),
    (0.9990, 0.9995),
    (0.4936, 0.6609),
    (0.8452, 0.9161),
    (0.9993, 0.9996),
    (0.6140, 0.7608),
    (0.8770, 0.9344),
    (0.9989, 0.9994),
    (0.4459, 0.6168),
    (0.9757, 0.9877),
    (0.9993, 0.9996),
    (0.3998, 0.5712),
    (0.9654, 0.9824),
    (0.9995, 0.9997),
    (0.2414, 0.3890),
    (0.8859, 0.9395),
    (0.9995, 0.9997),
    (0.3850, 0.5559),
    (0.9003, 0.9475),
];

fn f1_iou_identity() -> Outcome {
    let worst = TABLE_PAIRS
        .iter()
        .map(|&(iou, f1)| ((f1_from_iou(iou) - f1).abs(), iou))
        .fold((0.0, 0.0), |a, b| if b.0 > a.0 { b } else { a });
    check(
        worst.0 <= F1_TOLERANCE,
        format!(
            "24/24 pairs, max |2I/(1+I) - F1| = {:.2e} (tol {F1_TOLERANCE:e})",
            worst.0
        ),
        format!("IoU {} off by {:.2e}", worst.1, worst.0),
    )
}

fn random_mask(rng: &mut ChaCha8Rng, h: usize, w: usize) -> ClassMask {
    let v = (0..h * w).map(|_| rng.random_range(0..3u8)).collect();
    ClassMask::from_indices(
        Array2::from_shape_vec((h, w), v).unwrap(),
        GeoTransform::default(),
        "",
    )
    .unwrap()
}

fn oracle_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let names = ClassMap::default().names();
    let start = Instant::now();
    for i in 0..ORACLE_PAIRS {
        let (h, w) = (rng.random_range(1..=64), rng.random_range(1..=64));
        let gt = random_mask(&mut rng, h, w);
        // bias some predictions towards the ground truth so IoU spans its range
        let pred = if i % 2 == 0 {
            random_mask(&mut rng, h, w)
        } else {
            let mut p = gt.indices().to_owned();
            p.iter_mut().for_each(|v| {
                if rng.random_bool(0.2) {
                    *v = rng.random_range(0..3);
                }
            });
            ClassMask::from_indices(p, GeoTransform::default(), "").unwrap()
        };
        let cm = ConfusionMatrix::from_masks(&gt, &pred, 3).map_err(|e| e.to_string())?;
        let report = MetricReport::<f64>::from_matrix(&cm, &names, "overall", "")
            .map_err(|e| e.to_string())?;
        let oracle = brute_force_metrics(&gt, &pred, &names).map_err(|e| e.to_string())?;
        if report != oracle {
            return Err(format!(
                "pair {i} ({w}x{h}) differs: {report:?} vs {oracle:?}"
            ));
        }
    }
    let elapsed = start.elapsed();
    check(
        elapsed < ORACLE_BUDGET,
        format!("{ORACLE_PAIRS} random pairs up to 64x64 bit-exact in {elapsed:.2?} (budget {ORACLE_BUDGET:?})"),
        format!("took {elapsed:.2?} (budget {ORACLE_BUDGET:?})"),
    )
}

fn roundtrips() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xface);
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cmap = ClassMap::default();
    for i in 0..ROUNDTRIP_RASTERS {
        let (h, w) = (rng.random_range(1..=80), rng.random_range(1..=80));
        let gt = GeoTransform::north_up(
            rng.random_range(-1e6..1e6),
            rng.random_range(-1e6..1e6),
            rng.random_range(0.5..60.0),
            -rng.random_range(0.5..60.0),
        );
        let crs = if i % 3 == 0 { "" } else { "EPSG:32646" };
        let path = dir.path().join(format!("r{i}.tif"));
        let ts = [8, 16, 32][i % 3];

        let bands = rng.random_range(1..=4);
        let floats = Array3::from_shape_fn((bands, h, w), |_| rng.random_range(-1.0f32..1.0));
        let nodata = (i % 2 == 0).then_some(-9999.0);
        let fr = GeoRaster::new(floats, gt, crs, nodata).map_err(|e| e.to_string())?;
        write_geotiff(&fr, &path).map_err(|e| e.to_string())?;
        if read_geotiff::<f32>(&path).map_err(|e| e.to_string())? != fr {
            return Err(format!("raster {i}: f32 GeoTIFF round-trip differs"));
        }
        let tiles = tile_raster(&fr, ts).map_err(|e| e.to_string())?;
        if merge_tiles(&tiles, true).map_err(|e| e.to_string())? != fr {
            return Err(format!("raster {i}: split/merge differs"));
        }

        let mask = random_mask(&mut rng, h, w);
        let mask = ClassMask::from_indices(mask.indices().to_owned(), gt, crs).unwrap();
        let rendered = render_mask(&mask, &cmap).map_err(|e| e.to_string())?;
        write_geotiff(&rendered, &path).map_err(|e| e.to_string())?;
        let back = read_geotiff::<u8>(&path).map_err(|e| e.to_string())?;
        if back != rendered {
            return Err(format!("raster {i}: u8 GeoTIFF round-trip differs"));
        }
        let parsed = parse_mask(&back, &cmap).map_err(|e| e.to_string())?;
        if parsed.mask != mask || parsed.unmatched != 0 {
            return Err(format!("raster {i}: render/parse differs"));
        }
    }
    Ok(format!(
        "{ROUNDTRIP_RASTERS} random rasters: GeoTIFF (f32 and u8), split/merge, render/parse all exact"
    ))
}

fn synthetic_spec(width: usize, height: usize, noise: f64) -> SceneSpec {
    let mut spec = SceneSpec::new(width, height);
    spec.nodata_border = 3;
    spec.noise = noise;
    spec.seed = 11;
    let rect = |x, y, w, h, drop| LossRegion {
        shape: Shape::Rect {
            x,
            y,
            width: w,
            height: h,
        },
        drop,
        profile: Profile::Hailstorm,
        edge_drop: None,
    };
    spec.regions = vec![
        rect(10, 10, 40, 30, 0.5),
        rect(60, 12, 30, 30, 0.30),
        rect(100, 60, 20, 20, DEFAULT_THRESHOLD),
        LossRegion {
            shape: Shape::Ellipse {
                cx: 60.0,
                cy: 90.0,
                rx: 40.0,
                ry: 25.0,
            },
            drop: 0.7,
            profile: Profile::Heatwave,
            edge_drop: Some(0.05),
        },
    ];
    spec
}

fn end_to_end_identity() -> Outcome {
    let scene = generate_scene(&synthetic_spec(150, 130, 0.0)).map_err(|e| e.to_string())?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let stage = |name: &str, r: &GeoRaster<f32>| -> Result<GeoRaster<f32>, String> {
        let p = dir.path().join(name);
        write_geotiff(r, &p).map_err(|e| e.to_string())?;
        read_geotiff::<f32>(&p).map_err(|e| e.to_string())
    };
    let bands = BandAssignment::default();
    let before = stage("before.tif", &scene.before)?;
    let after = stage("after.tif", &scene.after)?;
    let nb = stage(
        "ndvi_before.tif",
        &compute_ndvi::<f32, f32>(&before, &bands).map_err(|e| e.to_string())?,
    )?;
    let na = stage(
        "ndvi_after.tif",
        &compute_ndvi::<f32, f32>(&after, &bands).map_err(|e| e.to_string())?,
    )?;
    let diff = stage(
        "diff.tif",
        &temporal_difference(&nb, &na).map_err(|e| e.to_string())?,
    )?;
    let mask = threshold_classify(&diff, DEFAULT_THRESHOLD as f32).map_err(|e| e.to_string())?;
    let cm = ConfusionMatrix::from_masks(&scene.expected, &mask, 3).map_err(|e| e.to_string())?;
    let ious: Vec<f64> = (0..3).map(|c| cm.class_iou(c)).collect();
    let present = scene.expected.histogram(3);
    check(
        ious.iter().all(|&v| v == 1.0) && present[..3].iter().all(|&n| n > 0),
        format!(
            "zero-noise scene reproduced, IoU {ious:?}, class pixels {:?}",
            &present[..3]
        ),
        format!("IoU {ious:?}, class pixels {:?}", &present[..3]),
    )
}

fn threshold_boundary() -> Outcome {
    let t32 = DEFAULT_THRESHOLD as f32;
    let below32 = f32::from_bits(t32.to_bits() - 1);
    let below64 = f64::from_bits(DEFAULT_THRESHOLD.to_bits() - 1);
    let r32 = GeoRaster::new(
        Array3::from_shape_vec((1, 1, 2), vec![t32, below32]).unwrap(),
        GeoTransform::default(),
        "",
        None,
    )
    .unwrap();
    let r64 = GeoRaster::new(
        Array3::from_shape_vec((1, 1, 2), vec![DEFAULT_THRESHOLD, below64]).unwrap(),
        GeoTransform::default(),
        "",
        None,
    )
    .unwrap();
    let m32 = threshold_classify(&r32, t32).map_err(|e| e.to_string())?;
    let m64 = threshold_classify(&r64, DEFAULT_THRESHOLD).map_err(|e| e.to_string())?;
    let got = (
        m32.indices()[[0, 0]],
        m32.indices()[[0, 1]],
        m64.indices()[[0, 0]],
        m64.indices()[[0, 1]],
    );
    check(
        got == (LOSS, OK, LOSS, OK),
        "0.33 -> LOSS, next value below 0.33 -> OK (f32 and f64)",
        format!("classes {got:?}"),
    )
}

fn tile_merge_equivalence() -> Outcome {
    let ts = 64;
    let mut lines = Vec::new();
    // one scene with a tile-multiple extent, one that needs padding
    for (w, h) in [(192, 128), (150, 130)] {
        let scene = generate_scene(&synthetic_spec(w, h, 0.04)).map_err(|e| e.to_string())?;
        let bands = BandAssignment::default();
        let nb = compute_ndvi::<f32, f32>(&scene.before, &bands).map_err(|e| e.to_string())?;
        let na = compute_ndvi::<f32, f32>(&scene.after, &bands).map_err(|e| e.to_string())?;
        let diff = temporal_difference(&nb, &na).map_err(|e| e.to_string())?;
        let pred =
            threshold_classify(&diff, DEFAULT_THRESHOLD as f32).map_err(|e| e.to_string())?;

        let gt_tiles = tile_raster(scene.expected.raster(), ts).map_err(|e| e.to_string())?;
        let pr_tiles = tile_raster(pred.raster(), ts).map_err(|e| e.to_string())?;
        let mut summed = ConfusionMatrix::new(3);
        for ((_, _, g), (_, _, p)) in gt_tiles.iter().zip(pr_tiles.iter()) {
            let g = ClassMask::new(g.clone()).map_err(|e| e.to_string())?;
            let p = ClassMask::new(p.clone()).map_err(|e| e.to_string())?;
            summed += &ConfusionMatrix::from_masks(&g, &p, 3).map_err(|e| e.to_string())?;
        }
        let merged_gt =
            ClassMask::new(merge_tiles(&gt_tiles, false).map_err(|e| e.to_string())?).unwrap();
        let merged_pr =
            ClassMask::new(merge_tiles(&pr_tiles, false).map_err(|e| e.to_string())?).unwrap();
        let merged =
            ConfusionMatrix::from_masks(&merged_gt, &merged_pr, 3).map_err(|e| e.to_string())?;
        if summed != merged {
            return Err(format!(
                "{w}x{h}: summed tile matrix differs from merged raster"
            ));
        }
        if w % ts == 0 && h % ts == 0 {
            let whole = ConfusionMatrix::from_masks(&scene.expected, &pred, 3)
                .map_err(|e| e.to_string())?;
            if whole != summed {
                return Err(format!("{w}x{h}: tile sum differs from untiled evaluation"));
            }
        }
        let errors = summed.total() - (0..3).map(|c| summed.true_positives(c)).sum::<u64>();
        lines.push(format!("{w}x{h} ({errors} misclassified px)"));
        // padding only adds background agreement; other classes are untouched
        let whole =
            ConfusionMatrix::from_masks(&scene.expected, &pred, 3).map_err(|e| e.to_string())?;
        for c in [LOSS as usize, OK as usize] {
            if whole.class_iou::<f64>(c) != summed.class_iou::<f64>(c) {
                return Err(format!("{w}x{h}: class {c} IoU changed by tiling"));
            }
        }
    }
    Ok(format!(
        "summed tile matrices equal merged-raster matrices: {}",
        lines.join(", ")
    ))
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 8] = [
        ("tiling arithmetic", tiling_arithmetic),
        ("split percentages", split_percentages),
        ("F1/IoU identity on published tables", f1_iou_identity),
        ("oracle equivalence", oracle_equivalence),
        ("round-trip identities", roundtrips),
        ("end-to-end synthetic identity", end_to_end_identity),
        ("threshold boundary", threshold_boundary),
        ("tile/merge metric equivalence", tile_merge_equivalence),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        match run() {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail}");
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
