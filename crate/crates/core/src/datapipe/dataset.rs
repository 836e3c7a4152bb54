//! On-disk dataset layout.
//!
//! ```text
//! <root>/manifest.json
//! <root>/<clip>/frames/000000.png ...
//! <root>/<clip>/joints.csv   frame,joint,x_mm,y_mm,z_mm
//! <root>/<clip>/boxes.csv    frame,x,y,w,h
//! <root>/<clip>/meta.json
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use image::RgbImage;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{BBox, RawClip};
use crate::error::{Error, Result};
use crate::network::COORDS;
use crate::tensor::Tensor;

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split {other:?} (train, val, test)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    /// Pinhole projection of a camera-frame point (mm) to pixel coordinates.
    pub fn project(&self, p: [f64; 3]) -> [f64; 2] {
        [self.fx * p[0] / p[2] + self.cx, self.fy * p[1] / p[2] + self.cy]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClipMeta {
    pub fps: f64,
    pub intrinsics: Intrinsics,
    pub width: u32,
    pub height: u32,
    pub subject: String,
    pub action: String,
    pub joints: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub dir: String,
    pub split: Split,
    pub action: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Manifest {
    pub clips: Vec<ManifestEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct JointRow {
    frame: usize,
    joint: usize,
    x_mm: f64,
    y_mm: f64,
    z_mm: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct BoxRow {
    frame: usize,
    x: i64,
    y: i64,
    w: u32,
    h: u32,
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::Dataset(format!("{}: {e}", path.display()))
}

fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

fn read_json<D: for<'de> Deserialize<'de>>(path: &Path) -> Result<D> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    serde_json::from_str(&text).map_err(|e| Error::Dataset(format!("{}: {e}", path.display())))
}

pub fn frame_path(clip_dir: &Path, frame: usize) -> PathBuf {
    clip_dir.join("frames").join(format!("{frame:06}.png"))
}

/// Write one clip directory.
pub fn write_clip(clip_dir: &Path, clip: &RawClip, meta: &ClipMeta) -> Result<()> {
    clip.validate()?;
    let frames_dir = clip_dir.join("frames");
    fs::create_dir_all(&frames_dir).map_err(|e| Error::io(format!("creating {}", frames_dir.display()), e))?;
    clip.frames.par_iter().enumerate().try_for_each(|(i, img)| {
        let path = frame_path(clip_dir, i);
        img.save(&path)
            .map_err(|e| Error::Dataset(format!("{}: {e}", path.display())))
    })?;

    let path = clip_dir.join("joints.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| csv_err(&path, e))?;
    let j = clip.joint_count();
    for (i, c) in clip.joints.data().chunks_exact(COORDS).enumerate() {
        w.serialize(JointRow {
            frame: i / j,
            joint: i % j,
            x_mm: c[0],
            y_mm: c[1],
            z_mm: c[2],
        })
        .map_err(|e| csv_err(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(format!("writing {}", path.display()), e))?;

    let path = clip_dir.join("boxes.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| csv_err(&path, e))?;
    for (frame, b) in clip.boxes.iter().enumerate() {
        w.serialize(BoxRow {
            frame,
            x: b.x,
            y: b.y,
            w: b.w,
            h: b.h,
        })
        .map_err(|e| csv_err(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(format!("writing {}", path.display()), e))?;

    write_json(&clip_dir.join("meta.json"), meta)
}

pub fn read_meta(clip_dir: &Path) -> Result<ClipMeta> {
    read_json(&clip_dir.join("meta.json"))
}

/// Read a clip directory back; `id` names it in errors and samples.
pub fn read_clip(clip_dir: &Path, id: &str) -> Result<RawClip> {
    if !clip_dir.is_dir() {
        return Err(Error::DatasetNotFound(clip_dir.to_path_buf()));
    }
    let meta = read_meta(clip_dir)?;

    let path = clip_dir.join("boxes.csv");
    let mut boxes = Vec::new();
    for (i, row) in csv::Reader::from_path(&path)
        .map_err(|e| csv_err(&path, e))?
        .deserialize::<BoxRow>()
        .enumerate()
    {
        let row = row.map_err(|e| csv_err(&path, e))?;
        if row.frame != i {
            return Err(Error::Dataset(format!("{}: row {i} has frame {}", path.display(), row.frame)));
        }
        boxes.push(BBox {
            x: row.x,
            y: row.y,
            w: row.w,
            h: row.h,
        });
    }
    let n = boxes.len();
    if n == 0 {
        return Err(Error::Dataset(format!("{}: no frames", path.display())));
    }

    let path = clip_dir.join("joints.csv");
    let mut joints = Vec::with_capacity(n * meta.joints * COORDS);
    for (i, row) in csv::Reader::from_path(&path)
        .map_err(|e| csv_err(&path, e))?
        .deserialize::<JointRow>()
        .enumerate()
    {
        let row = row.map_err(|e| csv_err(&path, e))?;
        if row.frame != i / meta.joints || row.joint != i % meta.joints {
            return Err(Error::Dataset(format!(
                "{}: row {i} is frame {} joint {}, rows must be frame-major",
                path.display(),
                row.frame,
                row.joint
            )));
        }
        joints.extend([row.x_mm, row.y_mm, row.z_mm]);
    }
    if joints.len() != n * meta.joints * COORDS {
        return Err(Error::Dataset(format!(
            "{}: {} joint rows for {n} frames of {} joints",
            path.display(),
            joints.len() / COORDS,
            meta.joints
        )));
    }

    let frames = (0..n)
        .into_par_iter()
        .map(|i| {
            let path = frame_path(clip_dir, i);
            image::open(&path)
                .map(|img| img.to_rgb8())
                .map_err(|e| Error::Dataset(format!("{}: {e}", path.display())))
        })
        .collect::<Result<Vec<RgbImage>>>()?;

    Ok(RawClip {
        id: id.to_string(),
        action: meta.action.clone(),
        fps: meta.fps,
        frames,
        boxes,
        joints: Tensor::from_vec(&[n, meta.joints, COORDS], joints)?,
    })
}

/// A dataset root with its manifest.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: Manifest,
}

impl Dataset {
    pub fn open(root: &Path) -> Result<Self> {
        let path = root.join(MANIFEST);
        if !path.is_file() {
            return Err(Error::DatasetNotFound(root.to_path_buf()));
        }
        Ok(Self {
            root: root.to_path_buf(),
            manifest: read_json(&path)?,
        })
    }

    pub fn write_manifest(root: &Path, manifest: &Manifest) -> Result<()> {
        fs::create_dir_all(root).map_err(|e| Error::io(format!("creating {}", root.display()), e))?;
        write_json(&root.join(MANIFEST), manifest)
    }

    pub fn entries(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.manifest.clips.iter().filter(move |c| c.split == split)
    }

    pub fn clip_dir(&self, entry: &ManifestEntry) -> PathBuf {
        self.root.join(&entry.dir)
    }

    pub fn load(&self, entry: &ManifestEntry) -> Result<RawClip> {
        read_clip(&self.clip_dir(entry), &entry.id)
    }
}
