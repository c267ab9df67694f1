//! File formats: frame directories, seed/GT CSV, detections CSV, progress
//! CSV and metrics reports.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::detect::DetectionResponse;
use crate::error::{Error, Result};
use crate::eval::{GroundTruth, Metrics, RocPoint, ScoredBox};
use crate::gdm::{ProgressRow, Region};
use crate::imaging::{load_frame, BoundingBox, Frame};

/// Numbered frame files (`frame_000001.png`/`.pgm`) in a directory, sorted
/// by name; index in the sequence is the sorted position.
pub fn list_frames(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| {
            matches!(
                p.extension().and_then(|e| e.to_str()),
                Some("png") | Some("pgm")
            )
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::EmptyStream);
    }
    Ok(paths)
}

pub fn load_frame_by_index(paths: &[PathBuf], index: usize) -> Result<Frame> {
    load_frame(&paths[index], index)
}

pub fn save_frame_png(frame: &Frame, path: &Path) -> Result<()> {
    let img = image::GrayImage::from_raw(frame.width, frame.height, frame.pixels.clone())
        .expect("frame pixel count");
    img.save(path).map_err(|source| Error::ImageRead {
        path: path.to_path_buf(),
        source,
    })
}

fn parse_fields(path: &Path, line_no: usize, line: &str, want: usize) -> Result<Vec<String>> {
    let fields: Vec<String> = line.split(',').map(|f| f.trim().to_string()).collect();
    if fields.len() < want {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: line_no,
            msg: format!("expected {want} comma-separated fields"),
        });
    }
    Ok(fields)
}

fn parse_num<T: std::str::FromStr>(path: &Path, line_no: usize, field: &str) -> Result<T> {
    field.parse().map_err(|_| Error::Parse {
        path: path.to_path_buf(),
        line: line_no,
        msg: format!("bad number {field:?}"),
    })
}

fn box_rows(path: &Path) -> Result<Vec<(usize, BoundingBox)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        // Tolerate one header line.
        if i == 0 && line.chars().next().is_some_and(|c| c.is_alphabetic()) {
            continue;
        }
        let f = parse_fields(path, i + 1, line, 5)?;
        let frame_index: usize = parse_num(path, i + 1, &f[0])?;
        let x: i32 = parse_num(path, i + 1, &f[1])?;
        let y: i32 = parse_num(path, i + 1, &f[2])?;
        let w: u32 = parse_num(path, i + 1, &f[3])?;
        let h: u32 = parse_num(path, i + 1, &f[4])?;
        if w == 0 || h == 0 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: "box extent must be >= 1".into(),
            });
        }
        rows.push((frame_index, BoundingBox::new(x, y, w, h)));
    }
    Ok(rows)
}

/// Seed annotations: CSV lines `frame_index,x,y,w,h`.
pub fn read_seeds_csv(path: &Path) -> Result<Vec<(usize, BoundingBox)>> {
    box_rows(path)
}

/// Ground truth uses the same `frame_index,x,y,w,h` rows.
pub fn read_gt_csv(path: &Path) -> Result<GroundTruth> {
    let mut gt = GroundTruth::default();
    for (frame, bbox) in box_rows(path)? {
        gt.per_frame.entry(frame).or_default().push(bbox);
    }
    Ok(gt)
}

pub fn write_gt_csv(gt: &GroundTruth, path: &Path) -> Result<()> {
    let mut out = String::from("frame_index,x,y,w,h\n");
    for (frame, boxes) in &gt.per_frame {
        for b in boxes {
            out.push_str(&format!("{frame},{},{},{},{}\n", b.x, b.y, b.w, b.h));
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn region_str(region: Region) -> &'static str {
    match region {
        Region::Positive => "positive",
        Region::Hard => "hard",
        Region::Negative => "negative",
    }
}

/// Detections/responses CSV: `frame_index,x,y,w,h,score,region,svm_used`.
pub fn write_detections_csv(responses: &[DetectionResponse<f64>], path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = std::io::BufWriter::new(file);
    let mut write = || -> std::io::Result<()> {
        writeln!(out, "frame_index,x,y,w,h,score,region,svm_used")?;
        for r in responses {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.frame_index,
                r.bbox.x,
                r.bbox.y,
                r.bbox.w,
                r.bbox.h,
                r.score,
                region_str(r.region),
                r.svm_margin.is_some()
            )?;
        }
        out.flush()
    };
    write().map_err(|e| Error::io(path, e))
}

/// Read a detections CSV back as scored boxes for evaluation.
pub fn read_detections_csv(path: &Path) -> Result<Vec<ScoredBox>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with("frame_index") {
            continue;
        }
        let f = parse_fields(path, i + 1, line, 6)?;
        rows.push(ScoredBox {
            frame_index: parse_num(path, i + 1, &f[0])?,
            bbox: BoundingBox::new(
                parse_num(path, i + 1, &f[1])?,
                parse_num(path, i + 1, &f[2])?,
                parse_num(path, i + 1, &f[3])?,
                parse_num(path, i + 1, &f[4])?,
            ),
            score: parse_num(path, i + 1, &f[5])?,
        });
    }
    Ok(rows)
}

/// Learner progress log: `t,theta,zeta,n_hard,n_pos_pseudo,n_neg_pseudo`.
pub fn write_progress_csv(rows: &[ProgressRow], path: &Path) -> Result<()> {
    let mut out = String::from("t,theta,zeta,n_hard,n_pos_pseudo,n_neg_pseudo\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.t, r.theta, r.zeta, r.n_hard, r.n_pos_pseudo, r.n_neg_pseudo
        ));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn write_metrics_report(metrics: &Metrics, path: &Path) -> Result<()> {
    let c = metrics.counts;
    let mut out = String::from("metric,value\n");
    out.push_str(&format!("tp,{}\n", c.tp));
    out.push_str(&format!("fp,{}\n", c.fp));
    out.push_str(&format!("fn,{}\n", c.fn_));
    out.push_str(&format!("precision,{}\n", metrics.precision));
    out.push_str(&format!("recall,{}\n", metrics.recall));
    out.push_str(&format!("f_measure,{}\n", metrics.f_measure));
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn write_roc_csv(points: &[RocPoint], path: &Path) -> Result<()> {
    let mut out = String::from("threshold,fppf,recall\n");
    for p in points {
        out.push_str(&format!("{},{},{}\n", p.threshold, p.fppf, p.recall));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
