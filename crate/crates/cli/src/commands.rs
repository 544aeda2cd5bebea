use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use cropsight::bands::CompositeKind;
use cropsight::dataset::{
    build_manifest, read_manifest, write_manifest, ManifestSummary, Role, SplitPolicy,
};
use cropsight::groundtruth::{load_mask, render_mask, threshold_classify, ClassMask};
use cropsight::metrics::{
    evaluate_pairs, format_table, pairs_from_manifest, write_report_csv, EvalPair, GroupBy,
};
use cropsight::raster::{
    merge_tiles, read_geotiff_header, read_tile_dir, tile_raster, write_tiles, TileGrid, TileSet,
};
use cropsight::synth::{generate_scene, load_scene_specs};
use cropsight::{
    compose, compute_ndvi, read_geotiff, temporal_difference, write_geotiff, GeoRaster,
    IndexRaster, Sample, SampleKind,
};
use rayon::prelude::*;
use serde::Deserialize;
use serde_json::{json, Value};

use crate::config::PipelineConfig;
use crate::{Command, Failure};

pub struct Summary {
    pub text: String,
    pub json: Value,
}

impl Summary {
    fn new(text: String, json: Value) -> Self {
        Self { text, json }
    }
}

type Outcome = Result<Summary, Failure>;

pub fn dispatch(command: Command, cfg: &PipelineConfig) -> Outcome {
    let stage = stage_name(&command);
    let result = match command {
        Command::Ndvi { input, output } => ndvi(cfg, &input, &cfg.output(&output)),
        Command::Compose {
            kind,
            input,
            output,
        } => composite(cfg, kind, &input, &cfg.output(&output)),
        Command::Diff {
            before,
            after,
            output,
        } => diff(&before, &after, &cfg.output(&output)),
        Command::Groundtruth {
            diff,
            output,
            render,
        } => groundtruth(cfg, &diff, &cfg.output(&output), render),
        Command::Render { mask, output } => render(cfg, &mask, &cfg.output(&output)),
        Command::Tile {
            input,
            outdir,
            stem,
        } => tile(cfg, &input, &cfg.output(&outdir), stem),
        Command::Merge {
            indir,
            output,
            like,
        } => merge(&indir, &cfg.output(&output), like.as_deref()),
        Command::Manifest { layout, output } => manifest(&layout, &cfg.output(&output)),
        Command::Evaluate {
            paths,
            predictions,
            group_by,
            input_type,
            role,
        } => {
            return evaluate(cfg, &paths, predictions, &group_by, &input_type, &role)
                .map_err(|f| staged(f, stage))
        }
        Command::Synth { scenespec, outdir } => synth(cfg, &scenespec, &cfg.output(&outdir)),
    };
    result.map_err(|e: anyhow::Error| Failure::Data(e.context(stage)))
}

fn staged(f: Failure, stage: &'static str) -> Failure {
    match f {
        Failure::Data(e) => Failure::Data(e.context(stage)),
        usage => usage,
    }
}

fn stage_name(c: &Command) -> &'static str {
    match c {
        Command::Ndvi { .. } => "ndvi",
        Command::Compose { .. } => "compose",
        Command::Diff { .. } => "diff",
        Command::Groundtruth { .. } => "groundtruth",
        Command::Render { .. } => "render",
        Command::Tile { .. } => "tile",
        Command::Merge { .. } => "merge",
        Command::Manifest { .. } => "manifest",
        Command::Evaluate { .. } => "evaluate",
        Command::Synth { .. } => "synth",
    }
}

fn kind_of(path: &Path) -> anyhow::Result<SampleKind> {
    Ok(read_geotiff_header(path)?.kind)
}

fn read<T: Sample>(path: &Path) -> anyhow::Result<GeoRaster<T>> {
    Ok(read_geotiff(path)?)
}

fn ensure_parent(path: &Path) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

fn write<T: Sample>(raster: &GeoRaster<T>, path: &Path) -> anyhow::Result<()> {
    ensure_parent(path)?;
    Ok(write_geotiff(raster, path)?)
}

fn raster_summary<T: Copy>(what: &str, path: &Path, r: &GeoRaster<T>) -> Summary {
    Summary::new(
        format!(
            "wrote {what} {} ({}x{}, {} band(s))\n",
            path.display(),
            r.width(),
            r.height(),
            r.bands()
        ),
        json!({
            "output": path,
            "width": r.width(),
            "height": r.height(),
            "bands": r.bands(),
        }),
    )
}

fn ndvi(cfg: &PipelineConfig, input: &Path, out: &Path) -> anyhow::Result<Summary> {
    let ndvi: IndexRaster = match kind_of(input)? {
        SampleKind::U8 => compute_ndvi(&read::<u8>(input)?, &cfg.bands),
        SampleKind::F32 => compute_ndvi(&read::<f32>(input)?, &cfg.bands),
    }
    .with_context(|| input.display().to_string())?;
    write(&ndvi, out)?;
    Ok(raster_summary("NDVI", out, &ndvi))
}

fn composite(
    cfg: &PipelineConfig,
    kind: CompositeKind,
    input: &Path,
    out: &Path,
) -> anyhow::Result<Summary> {
    let raster = match kind_of(input)? {
        SampleKind::U8 => compose(&read::<u8>(input)?, kind, &cfg.bands, &cfg.contrast),
        SampleKind::F32 => compose(&read::<f32>(input)?, kind, &cfg.bands, &cfg.contrast),
    }
    .with_context(|| input.display().to_string())?;
    write(&raster, out)?;
    Ok(raster_summary("composite", out, &raster))
}

fn render(cfg: &PipelineConfig, mask: &Path, out: &Path) -> anyhow::Result<Summary> {
    let classes = cfg.class_map()?;
    let mask = load_mask(mask, &classes)?;
    let rendered = render_mask(&mask, &classes)?;
    write(&rendered, out)?;
    Ok(raster_summary("rendered mask", out, &rendered))
}

fn diff(before: &Path, after: &Path, out: &Path) -> anyhow::Result<Summary> {
    let (kb, ka) = (kind_of(before)?, kind_of(after)?);
    if kb != ka {
        return Err(anyhow!(
            "{} holds {kb:?} samples but {} holds {ka:?}",
            before.display(),
            after.display()
        ));
    }
    let context = || format!("{} vs {}", before.display(), after.display());
    match kb {
        SampleKind::U8 => {
            let d = temporal_difference(&read::<u8>(before)?, &read::<u8>(after)?)
                .with_context(context)?;
            write(&d, out)?;
            Ok(raster_summary("difference", out, &d))
        }
        SampleKind::F32 => {
            let d = temporal_difference(&read::<f32>(before)?, &read::<f32>(after)?)
                .with_context(context)?;
            write(&d, out)?;
            Ok(raster_summary("difference", out, &d))
        }
    }
}

fn class_counts(mask: &ClassMask, names: &[String]) -> (String, Value) {
    let hist = mask.histogram(names.len());
    let mut text = String::new();
    let mut counts = serde_json::Map::new();
    for (name, n) in names.iter().zip(&hist) {
        let _ = writeln!(text, "  {name}: {n} px");
        counts.insert(name.clone(), json!(n));
    }
    (text, Value::Object(counts))
}

fn groundtruth(
    cfg: &PipelineConfig,
    input: &Path,
    out: &Path,
    render: bool,
) -> anyhow::Result<Summary> {
    if kind_of(input)? != SampleKind::F32 {
        return Err(anyhow!(
            "{}: thresholding needs a floating-point NDVI difference",
            input.display()
        ));
    }
    let diff = read::<f32>(input)?;
    let classes = cfg.class_map()?;
    let mask = threshold_classify(&diff, cfg.threshold as f32)
        .with_context(|| input.display().to_string())?;
    if render {
        write(&render_mask(&mask, &classes)?, out)?;
    } else {
        write(mask.raster(), out)?;
    }
    let (text, counts) = class_counts(&mask, &classes.names());
    Ok(Summary::new(
        format!(
            "wrote mask {} (threshold {})\n{text}",
            out.display(),
            cfg.threshold
        ),
        json!({ "output": out, "threshold": cfg.threshold, "rendered": render, "classes": counts }),
    ))
}

fn tile(
    cfg: &PipelineConfig,
    input: &Path,
    outdir: &Path,
    stem: Option<String>,
) -> anyhow::Result<Summary> {
    let stem = match stem {
        Some(s) => s,
        None => input
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| anyhow!("{}: cannot derive a tile stem", input.display()))?
            .to_string(),
    };
    fn cut<T: Sample>(
        input: &Path,
        ts: usize,
        dir: &Path,
        stem: &str,
    ) -> anyhow::Result<(usize, TileGrid)> {
        let tiles = tile_raster(&read::<T>(input)?, ts)?;
        let written = write_tiles(&tiles, dir, stem)?;
        Ok((written.len(), tiles.grid()))
    }
    let ts = cfg.tile_size;
    let (count, grid) = match kind_of(input)? {
        SampleKind::U8 => cut::<u8>(input, ts, outdir, &stem)?,
        SampleKind::F32 => cut::<f32>(input, ts, outdir, &stem)?,
    };
    let (cols, rows) = (grid.cols, grid.rows);
    let (pw, ph) = grid.padded_dims();
    Ok(Summary::new(
        format!(
            "wrote {count} tiles of {ts}x{ts} ({cols} cols x {rows} rows, padded to {pw}x{ph}) to {}\n",
            outdir.display()
        ),
        json!({
            "outdir": outdir,
            "tiles": count,
            "tile_size": ts,
            "grid_cols": cols,
            "grid_rows": rows,
            "padded_width": pw,
            "padded_height": ph,
        }),
    ))
}

fn merge(indir: &Path, out: &Path, like: Option<&Path>) -> anyhow::Result<Summary> {
    fn join<T: Sample>(indir: &Path, out: &Path, like: Option<&Path>) -> anyhow::Result<Summary> {
        let mut tiles: TileSet<T> = read_tile_dir(indir)?;
        if let Some(reference) = like {
            let header = read_geotiff_header(reference)?;
            if header.geotransform != *tiles.geotransform() {
                return Err(anyhow!(
                    "{} is not georeferenced like the tiles in {}",
                    reference.display(),
                    indir.display()
                ));
            }
            tiles
                .set_source_dims(header.width, header.height)
                .with_context(|| reference.display().to_string())?;
        }
        let merged = merge_tiles(&tiles, like.is_some())?;
        write(&merged, out)?;
        Ok(raster_summary("merged raster", out, &merged))
    }
    let first = std::fs::read_dir(indir)
        .with_context(|| indir.display().to_string())?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|x| x == "tif"))
        .min()
        .ok_or_else(|| anyhow!("no tiles in {}", indir.display()))?;
    match kind_of(&first)? {
        SampleKind::U8 => join::<u8>(indir, out, like),
        SampleKind::F32 => join::<f32>(indir, out, like),
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestConfig {
    /// Root of input tiles, laid out `{district}/{year}/`.
    inputs: PathBuf,
    /// Root of mask tiles with the same layout.
    masks: PathBuf,
    districts: SplitPolicy,
}

fn manifest(config: &Path, out: &Path) -> anyhow::Result<Summary> {
    let text = std::fs::read_to_string(config).with_context(|| config.display().to_string())?;
    let mut mc: ManifestConfig =
        toml::from_str(&text).with_context(|| config.display().to_string())?;
    let base = config.parent().unwrap_or(Path::new(""));
    for p in [&mut mc.inputs, &mut mc.masks] {
        if p.is_relative() {
            *p = base.join(&*p);
        }
    }
    let entries = build_manifest(&mc.inputs, &mc.masks, &mc.districts)?;
    ensure_parent(out)?;
    write_manifest(out, &entries)?;
    let summary = ManifestSummary::from_entries(&entries);
    for share in &summary.roles {
        if share.tiles == 0 {
            log::warn!("no tiles assigned to {}", share.role);
        }
    }
    Ok(Summary::new(
        format!("wrote manifest {}\n{summary}", out.display()),
        json!({ "output": out, "summary": summary }),
    ))
}

fn evaluate(
    cfg: &PipelineConfig,
    paths: &[PathBuf],
    predictions: Option<PathBuf>,
    group_by: &str,
    input_type: &str,
    role: &str,
) -> Result<Summary, Failure> {
    let group_by: GroupBy = group_by
        .parse()
        .map_err(|e: cropsight::Error| Failure::Usage(e.to_string()))?;
    let (pairs, report) = match (paths, predictions) {
        ([manifest, report], Some(pred_root)) => {
            let role = match role {
                "all" => None,
                r => Some(
                    r.parse::<Role>()
                        .map_err(|e| Failure::Usage(e.to_string()))?,
                ),
            };
            let entries = read_manifest(manifest).map_err(anyhow::Error::from)?;
            let pairs = pairs_from_manifest(&entries, cfg.output(&pred_root), role);
            (pairs, report)
        }
        ([_, _], None) => {
            return Err(Failure::Usage(
                "evaluating a manifest needs --predictions DIR".into(),
            ))
        }
        ([gt, pred, report], None) => (
            vec![EvalPair {
                gt: gt.clone(),
                pred: pred.clone(),
                year: None,
            }],
            report,
        ),
        ([_, _, _], Some(_)) => {
            return Err(Failure::Usage(
                "--predictions only applies when evaluating a manifest".into(),
            ))
        }
        _ => {
            return Err(Failure::Usage(
                "expected MANIFEST REPORT or GT PRED REPORT".into(),
            ))
        }
    };
    let classes = cfg.class_map()?;
    let reports =
        evaluate_pairs(&pairs, group_by, &classes, input_type).map_err(anyhow::Error::from)?;
    let out = cfg.output(report);
    ensure_parent(&out)?;
    write_report_csv(&out, &reports).map_err(anyhow::Error::from)?;
    Ok(Summary::new(
        format!(
            "{}wrote report {} ({} pair(s))\n",
            format_table(&reports),
            out.display(),
            pairs.len()
        ),
        json!({ "output": out, "pairs": pairs.len(), "reports": reports }),
    ))
}

fn synth(cfg: &PipelineConfig, spec_path: &Path, outdir: &Path) -> anyhow::Result<Summary> {
    let specs = load_scene_specs(spec_path)?;
    let many = specs.len() > 1;
    if many {
        let mut names = BTreeSet::new();
        if let Some(dup) = specs.iter().find(|s| !names.insert(s.name.as_str())) {
            return Err(anyhow!(
                "{}: scene name {:?} used twice",
                spec_path.display(),
                dup.name
            ));
        }
    }
    let classes = cfg.class_map()?;
    let names = classes.names();
    let results = specs
        .par_iter()
        .map(|spec| {
            let dir = if many { outdir.join(&spec.name) } else { outdir.to_path_buf() };
            let scene = generate_scene(spec).with_context(|| format!("scene {:?}", spec.name))?;
            write(&scene.before, &dir.join("before.tif"))?;
            write(&scene.after, &dir.join("after.tif"))?;
            write(scene.expected.raster(), &dir.join("expected_mask.tif"))?;
            write(&render_mask(&scene.expected, &classes)?, &dir.join("expected_rgb.tif"))?;
            let (text, counts) = class_counts(&scene.expected, &names);
            Ok((
                format!("scene {} -> {}\n{text}", spec.name, dir.display()),
                json!({ "name": spec.name, "district": spec.district, "outdir": dir, "classes": counts }),
            ))
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    let (text, json): (Vec<String>, Vec<Value>) = results.into_iter().unzip();
    Ok(Summary::new(text.concat(), json!({ "scenes": json })))
}
