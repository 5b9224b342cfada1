//! Dataset ingestion, image and pixel level scoring, and benchmark reports.
//!
//! Layouts:
//! - `grip`: `root/tampered/*`, masks in `root/masks/` (same stem, optionally with `_gt` or
//!   `_mask`), originals in `root/original/`.
//! - `cmh`: any depth below `root`; `name.ext` is tampered when `name_gt.ext` sits next to it.
//!   Sub-directories are visited in sorted order.
//! - `generic-pairs`: flat directory; `name.ext` with `name_gt.ext` is tampered, otherwise original.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::config::Config;
use crate::error::{Error, Result};
use crate::image_io::{load_image, Mask};
use crate::pipeline::{detect, write_text};
use crate::real::Real;

const IMAGE_EXTENSIONS: &[&str] = &["png", "jpg", "jpeg", "bmp"];
const MASK_SUFFIXES: &[&str] = &["_gt", "_mask"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Layout {
    Grip,
    Cmh,
    GenericPairs,
}

impl std::str::FromStr for Layout {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "grip" => Ok(Self::Grip),
            "cmh" => Ok(Self::Cmh),
            "generic-pairs" | "generic" => Ok(Self::GenericPairs),
            _ => Err(Error::Dataset(format!("unknown layout `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DatasetEntry {
    pub image: PathBuf,
    pub mask: Option<PathBuf>,
    pub tampered: bool,
}

fn is_image(p: &Path) -> bool {
    p.is_file()
        && p.extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

fn stem(p: &Path) -> String {
    p.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string()
}

fn is_mask_name(p: &Path) -> bool {
    let s = stem(p);
    MASK_SUFFIXES.iter().any(|suf| s.ends_with(suf))
}

fn sorted_dir(dir: &Path) -> Result<Vec<PathBuf>> {
    let rd = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::new();
    for ent in rd {
        out.push(ent.map_err(|e| Error::io(dir, e))?.path());
    }
    out.sort();
    Ok(out)
}

/// Images of `dir` keyed by stem.
fn images_by_stem(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    Ok(sorted_dir(dir)?
        .into_iter()
        .filter(|p| is_image(p))
        .map(|p| (stem(&p), p))
        .collect())
}

fn pair_directory(dir: &Path, out: &mut Vec<DatasetEntry>, originals: bool) -> Result<()> {
    let by_stem = images_by_stem(dir)?;
    for (s, path) in &by_stem {
        if is_mask_name(path) {
            continue;
        }
        let mask = MASK_SUFFIXES.iter().find_map(|suf| by_stem.get(&format!("{s}{suf}")));
        match mask {
            Some(m) => out.push(DatasetEntry {
                image: path.clone(),
                mask: Some(m.clone()),
                tampered: true,
            }),
            None if originals => out.push(DatasetEntry {
                image: path.clone(),
                mask: None,
                tampered: false,
            }),
            None => {}
        }
    }
    Ok(())
}

fn walk_cmh(dir: &Path, out: &mut Vec<DatasetEntry>) -> Result<()> {
    pair_directory(dir, out, false)?;
    for sub in sorted_dir(dir)?.into_iter().filter(|p| p.is_dir()) {
        walk_cmh(&sub, out)?;
    }
    Ok(())
}

pub fn load_dataset(root: &Path, layout: Layout) -> Result<Vec<DatasetEntry>> {
    if !root.is_dir() {
        return Err(Error::Dataset(format!("{} is not a directory", root.display())));
    }
    let mut out = Vec::new();
    match layout {
        Layout::GenericPairs => pair_directory(root, &mut out, true)?,
        Layout::Cmh => walk_cmh(root, &mut out)?,
        Layout::Grip => {
            let tampered = root.join("tampered");
            let masks = root.join("masks");
            if tampered.is_dir() {
                let mask_map = if masks.is_dir() { images_by_stem(&masks)? } else { BTreeMap::new() };
                for (s, path) in images_by_stem(&tampered)? {
                    let m = std::iter::once(s.clone())
                        .chain(MASK_SUFFIXES.iter().map(|suf| format!("{s}{suf}")))
                        .find_map(|k| mask_map.get(&k).cloned())
                        .ok_or_else(|| Error::Dataset(format!("no mask for tampered image {}", path.display())))?;
                    out.push(DatasetEntry {
                        image: path,
                        mask: Some(m),
                        tampered: true,
                    });
                }
            }
            let original = root.join("original");
            if original.is_dir() {
                out.extend(images_by_stem(&original)?.into_values().map(|image| DatasetEntry {
                    image,
                    mask: None,
                    tampered: false,
                }));
            }
        }
    }
    if out.is_empty() {
        log::warn!("no images found under {}", root.display());
    }
    Ok(out)
}

/// Tampered images of a CMH tree followed by the originals of a GRIP tree.
pub fn load_combined(cmh_root: &Path, grip_root: &Path) -> Result<Vec<DatasetEntry>> {
    let mut out = load_dataset(cmh_root, Layout::Cmh)?;
    out.extend(load_dataset(grip_root, Layout::Grip)?.into_iter().filter(|e| !e.tampered));
    Ok(out)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

impl std::ops::Add for ConfusionCounts {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
            tn: self.tn + o.tn,
        }
    }
}

impl std::iter::Sum for ConfusionCounts {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::default(), |a, b| a + b)
    }
}

pub fn confusion_pixels(pred: &Mask, truth: &Mask) -> Result<ConfusionCounts> {
    if (pred.width(), pred.height()) != (truth.width(), truth.height()) {
        return Err(Error::DimensionMismatch(format!(
            "prediction {}x{} vs ground truth {}x{}",
            pred.width(),
            pred.height(),
            truth.width(),
            truth.height()
        )));
    }
    let mut c = ConfusionCounts::default();
    for (&p, &t) in pred.data().iter().zip(truth.data()) {
        match (p, t) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

pub fn confusion_image(pred: bool, truth: bool) -> ConfusionCounts {
    confusion_pixels(&Mask::from_vec(1, 1, vec![pred]), &Mask::from_vec(1, 1, vec![truth])).expect("1x1")
}

/// `None` marks an undefined metric (zero denominator).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Metrics {
    pub tpr: Option<f64>,
    pub fpr: Option<f64>,
    pub f: Option<f64>,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn metrics(c: &ConfusionCounts) -> Metrics {
    Metrics {
        tpr: ratio(c.tp, c.tp + c.fn_),
        fpr: ratio(c.fp, c.fp + c.tn),
        f: ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImageRow {
    pub path: PathBuf,
    pub truth_tampered: bool,
    pub verdict: bool,
    /// Pixel counts; zero for originals.
    pub pixels: ConfusionCounts,
    pub seconds: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub images: usize,
    pub image_counts: ConfusionCounts,
    pub pixel_counts: ConfusionCounts,
    pub tpr: Option<f64>,
    pub fpr: Option<f64>,
    pub f_image: Option<f64>,
    /// F over pixel counts pooled across tampered images.
    pub f_pixel: Option<f64>,
    /// Mean of per-image pixel F over tampered images where it is defined.
    pub f_pixel_macro: Option<f64>,
    pub mean_seconds: Option<f64>,
    pub rows: Vec<ImageRow>,
}

impl MetricsReport {
    pub fn from_rows(rows: Vec<ImageRow>) -> Self {
        let image_counts: ConfusionCounts = rows.iter().map(|r| confusion_image(r.verdict, r.truth_tampered)).sum();
        let pixel_counts: ConfusionCounts = rows.iter().filter(|r| r.truth_tampered).map(|r| r.pixels).sum();
        let im = metrics(&image_counts);
        let per_image: Vec<f64> = rows
            .iter()
            .filter(|r| r.truth_tampered)
            .filter_map(|r| metrics(&r.pixels).f)
            .collect();
        let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
        let secs: Vec<f64> = rows.iter().map(|r| r.seconds).collect();
        Self {
            images: rows.len(),
            image_counts,
            pixel_counts,
            tpr: im.tpr,
            fpr: im.fpr,
            f_image: im.f,
            f_pixel: metrics(&pixel_counts).f,
            f_pixel_macro: mean(&per_image),
            mean_seconds: mean(&secs),
            rows,
        }
    }

    /// One-line table with TPR, FPR, F-i, F-p (percent) and mean time.
    pub fn summary_table(&self) -> String {
        let pct = |v: Option<f64>| v.map_or("undefined".to_string(), |x| format!("{:.2}", 100.0 * x));
        let secs = self.mean_seconds.map_or("-".to_string(), |s| format!("{s:.2}"));
        format!(
            "{:>10} {:>10} {:>10} {:>10} {:>10} {:>8}\n{:>10} {:>10} {:>10} {:>10} {:>10} {:>8}\n",
            "images",
            "TPR",
            "FPR",
            "F-i",
            "F-p",
            "time(s)",
            self.images,
            pct(self.tpr),
            pct(self.fpr),
            pct(self.f_image),
            pct(self.f_pixel),
            secs
        )
    }

    /// `per_image.csv` and `summary.json` in `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let csv_path = dir.join("per_image.csv");
        let ser = |e: csv::Error| Error::Serialization(e.to_string());
        let mut w = csv::Writer::from_path(&csv_path).map_err(ser)?;
        w.write_record(["path", "verdict", "TP", "FP", "FN", "TN", "seconds", "error"])
            .map_err(ser)?;
        for r in &self.rows {
            w.write_record([
                r.path.display().to_string(),
                if r.verdict { "tampered" } else { "clean" }.to_string(),
                r.pixels.tp.to_string(),
                r.pixels.fp.to_string(),
                r.pixels.fn_.to_string(),
                r.pixels.tn.to_string(),
                format!("{:.4}", r.seconds),
                r.error.clone().unwrap_or_default(),
            ])
            .map_err(ser)?;
        }
        w.flush().map_err(|e| Error::io(&csv_path, e))?;
        let summary = serde_json::json!({
            "images": self.images,
            "TPR": self.tpr,
            "FPR": self.fpr,
            "F_image": self.f_image,
            "F_pixel": self.f_pixel,
            "F_pixel_macro": self.f_pixel_macro,
            "mean_seconds": self.mean_seconds,
            "image_counts": self.image_counts,
            "pixel_counts": self.pixel_counts,
        });
        let text = serde_json::to_string_pretty(&summary).map_err(|e| Error::Serialization(e.to_string()))?;
        write_text(&dir.join("summary.json"), &text)
    }
}

fn score_entry(entry: &DatasetEntry, detector: &(dyn Fn(&DatasetEntry) -> Result<Mask> + Sync), min_area_fraction: f64) -> ImageRow {
    let start = Instant::now();
    let truth = entry.mask.as_ref().map(|p| Mask::load(p));
    let outcome = detector(entry);
    let seconds = start.elapsed().as_secs_f64();
    let mut row = ImageRow {
        path: entry.image.clone(),
        truth_tampered: entry.tampered,
        verdict: false,
        pixels: ConfusionCounts::default(),
        seconds,
        error: None,
    };
    let truth = match truth.transpose() {
        Ok(t) => t,
        Err(e) => {
            row.error = Some(e.to_string());
            return row;
        }
    };
    match outcome {
        Ok(pred) => {
            row.verdict = crate::localization::verdict(&pred, min_area_fraction);
            if let Some(t) = &truth {
                match confusion_pixels(&pred, t) {
                    Ok(c) => row.pixels = c,
                    Err(e) => row.error = Some(e.to_string()),
                }
            }
        }
        Err(e) => {
            row.error = Some(e.to_string());
            if let Some(t) = &truth {
                row.pixels = confusion_pixels(&Mask::new(t.width(), t.height()), t).expect("same dims");
            }
        }
    }
    if let Some(e) = &row.error {
        log::warn!("{}: {e}", entry.image.display());
    }
    row
}

/// Scores `detector` (which returns a predicted mask at original resolution) over `entries`
/// with at most `workers` images in flight. Row order follows `entries`.
pub fn run_benchmark_with(
    entries: &[DatasetEntry],
    workers: usize,
    min_area_fraction: f64,
    detector: &(dyn Fn(&DatasetEntry) -> Result<Mask> + Sync),
) -> Result<MetricsReport> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let rows = pool.install(|| {
        entries
            .par_iter()
            .map(|e| score_entry(e, detector, min_area_fraction))
            .collect::<Vec<_>>()
    });
    Ok(MetricsReport::from_rows(rows))
}

/// Full pipeline over `entries`. `workers = 0` uses the configured thread count.
pub fn run_benchmark<T: Real>(entries: &[DatasetEntry], config: &Config, workers: usize) -> Result<MetricsReport> {
    config.validate()?;
    let workers = match (workers, config.threads) {
        (0, 0) => 0,
        (0, t) => t,
        (w, _) => w,
    };
    let detector = |e: &DatasetEntry| -> Result<Mask> {
        let img = load_image(&e.image)?;
        Ok(detect::<T>(&img, config)?.result.mask)
    };
    run_benchmark_with(entries, workers, config.min_region_area_fraction, &detector)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn confusion_examples() {
        let mut truth = Mask::new(4, 4);
        truth.set(1, 1, true);
        truth.set(2, 2, true);
        assert_eq!(confusion_pixels(&truth, &truth).unwrap().fp, 0);
        let zero = Mask::new(4, 4);
        let c = confusion_pixels(&zero, &truth).unwrap();
        assert_eq!((c.fn_, c.tp), (2, 0));
        let ones = Mask::from_vec(4, 4, vec![true; 16]);
        assert_eq!(confusion_pixels(&ones, &zero).unwrap().fp, 16);
        assert!(confusion_pixels(&Mask::new(3, 4), &truth).is_err());
    }

    #[test]
    fn metric_examples() {
        let c = |tp, fp, fn_, tn| ConfusionCounts { tp, fp, fn_, tn };
        assert_eq!(metrics(&c(80, 0, 0, 0)).tpr, Some(1.0));
        assert_eq!(metrics(&c(90, 10, 10, 0)).f, Some(0.9));
        assert_eq!(metrics(&c(0, 0, 0, 80)).fpr, Some(0.0));
        let m = metrics(&c(0, 0, 0, 0));
        assert_eq!((m.tpr, m.fpr, m.f), (None, None, None));
    }

    #[test]
    fn single_original_gives_undefined_tpr() {
        let rows = vec![ImageRow {
            path: "a.png".into(),
            truth_tampered: false,
            verdict: false,
            pixels: ConfusionCounts::default(),
            seconds: 0.1,
            error: None,
        }];
        let r = MetricsReport::from_rows(rows);
        assert_eq!(r.fpr, Some(0.0));
        assert_eq!(r.tpr, None);
    }

    fn touch_png(path: &Path, mask: &Mask) {
        mask.save_png(path).unwrap();
    }

    #[test]
    fn layouts_are_discovered_in_order() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        let m = Mask::new(8, 8);
        touch_png(&root.join("b.png"), &m);
        touch_png(&root.join("b_gt.png"), &m);
        touch_png(&root.join("a.png"), &m);
        let g = load_dataset(root, Layout::GenericPairs).unwrap();
        assert_eq!(g.len(), 2);
        assert!(!g[0].tampered && g[1].tampered);
        assert_eq!(g[1].mask.as_deref(), Some(root.join("b_gt.png").as_path()));

        std::fs::create_dir_all(root.join("cmh/2")).unwrap();
        std::fs::create_dir_all(root.join("cmh/1")).unwrap();
        for d in ["cmh/1", "cmh/2"] {
            touch_png(&root.join(d).join("x.png"), &m);
            touch_png(&root.join(d).join("x_gt.png"), &m);
        }
        let c = load_dataset(&root.join("cmh"), Layout::Cmh).unwrap();
        assert_eq!(c.len(), 2);
        assert!(c[0].image.starts_with(root.join("cmh/1")));

        for d in ["grip/tampered", "grip/masks", "grip/original"] {
            std::fs::create_dir_all(root.join(d)).unwrap();
        }
        touch_png(&root.join("grip/tampered/t1.png"), &m);
        touch_png(&root.join("grip/masks/t1_gt.png"), &m);
        touch_png(&root.join("grip/original/o1.png"), &m);
        let gr = load_dataset(&root.join("grip"), Layout::Grip).unwrap();
        assert_eq!(gr.iter().filter(|e| e.tampered).count(), 1);
        assert_eq!(gr.len(), 2);

        let both = load_combined(&root.join("cmh"), &root.join("grip")).unwrap();
        assert_eq!(both.len(), 3);
        assert_eq!(both.iter().filter(|e| !e.tampered).count(), 1);

        touch_png(&root.join("grip/tampered/t2.png"), &m);
        assert!(load_dataset(&root.join("grip"), Layout::Grip).is_err());
    }

    #[test]
    fn empty_directory_is_empty_list() {
        let dir = tempfile::tempdir().unwrap();
        assert!(load_dataset(dir.path(), Layout::GenericPairs).unwrap().is_empty());
        assert!(load_dataset(&dir.path().join("missing"), Layout::Cmh).is_err());
    }

    #[test]
    fn perfect_detector_scores_one_and_failures_do_not_abort() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = Mask::new(16, 16);
        for x in 0..8 {
            m.set(x, 3, true);
        }
        for name in ["p", "q"] {
            touch_png(&dir.path().join(format!("{name}.png")), &m);
            touch_png(&dir.path().join(format!("{name}_gt.png")), &m);
        }
        let entries = load_dataset(dir.path(), Layout::GenericPairs).unwrap();
        let perfect = |e: &DatasetEntry| Mask::load(e.mask.as_ref().unwrap());
        let r = run_benchmark_with(&entries, 2, 0.0005, &perfect).unwrap();
        assert_eq!(r.f_pixel, Some(1.0));
        assert_eq!(r.tpr, Some(1.0));

        let failing = |_: &DatasetEntry| -> Result<Mask> { Err(Error::InvalidArgument("boom".into())) };
        let r = run_benchmark_with(&entries, 2, 0.0005, &failing).unwrap();
        assert_eq!(r.image_counts.fn_, 2);
        assert_eq!(r.pixel_counts.fn_, 16);
        assert!(r.rows.iter().all(|row| row.error.is_some()));
        r.write(&dir.path().join("out")).unwrap();
        assert!(dir.path().join("out/summary.json").exists());
    }
}
