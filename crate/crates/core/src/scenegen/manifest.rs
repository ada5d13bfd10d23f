//! Dataset directory layout.
//!
//! ```text
//! manifest.toml        version, counts, scene config, per-view file paths
//! cameras.txt          one line per view: id fx fy cx cy r00 r01 r02 t0 r10 .. t2
//! images/NNN.png       training images
//! masks/NNN.png        distractor masks, 255 = distractor
//! features/NNN.fmap    feature maps
//! test/NNN.png         clean held-out images
//! ```
//!
//! Camera ids below `n_views` are training views; the rest are test views in order.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Dataset, SceneConfig, TestView, View};
use crate::error::{Error, Result};
use crate::features::{load_fmap, nn_upsample, save_fmap};
use crate::fieldrender::Camera;
use crate::raster::{load_mask, save_mask, Image};

pub const MANIFEST_FILE: &str = "manifest.toml";
pub const MANIFEST_VERSION: u32 = 1;
const CAMERAS_FILE: &str = "cameras.txt";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainEntry {
    image: String,
    mask: String,
    features: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TestEntry {
    image: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    version: u32,
    n_views: usize,
    n_test: usize,
    cameras: String,
    scene: SceneConfig,
    #[serde(default)]
    train: Vec<TrainEntry>,
    #[serde(default)]
    test: Vec<TestEntry>,
}

fn ensure_dir(p: &Path) -> Result<()> {
    std::fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

fn write_cameras(path: &Path, cams: &[&Camera]) -> Result<()> {
    let mut s = String::new();
    for (i, c) in cams.iter().enumerate() {
        write!(s, "{i} {:?} {:?} {:?} {:?}", c.fx, c.fy, c.cx, c.cy).expect("string write");
        for row in &c.pose {
            for v in row {
                write!(s, " {v:?}").expect("string write");
            }
        }
        s.push('\n');
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// Parsed camera lines keyed by id, intrinsics and pose only.
fn read_cameras(path: &Path) -> Result<Vec<(usize, [f64; 16])>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |m: String| Error::InvalidInput(format!("{}:{}: {m}", path.display(), lineno + 1));
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 17 {
            return Err(bad(format!("expected 17 fields, found {}", fields.len())));
        }
        let id: usize = fields[0].parse().map_err(|_| bad(format!("bad view id `{}`", fields[0])))?;
        let mut vals = [0.0; 16];
        for (k, f) in fields[1..].iter().enumerate() {
            vals[k] = f.parse().map_err(|_| bad(format!("bad number `{f}`")))?;
        }
        out.push((id, vals));
    }
    Ok(out)
}

fn make_camera(id: usize, v: &[f64; 16], width: usize, height: usize) -> Result<Camera> {
    let mut pose = [[0.0; 4]; 3];
    for r in 0..3 {
        pose[r].copy_from_slice(&v[4 + 4 * r..8 + 4 * r]);
    }
    Camera::new(v[0], v[1], v[2], v[3], pose, width, height).map_err(|e| Error::InvalidInput(format!("camera {id}: {e}")))
}

/// Writes `ds` under `dir`, creating it if needed.
pub fn save_dataset(ds: &Dataset, dir: &Path) -> Result<()> {
    ds.validate()?;
    for sub in ["images", "masks", "features", "test"] {
        ensure_dir(&dir.join(sub))?;
    }
    let mut manifest = Manifest {
        version: MANIFEST_VERSION,
        n_views: ds.train.len(),
        n_test: ds.test.len(),
        cameras: CAMERAS_FILE.into(),
        scene: ds.config.clone(),
        train: Vec::new(),
        test: Vec::new(),
    };
    for (i, v) in ds.train.iter().enumerate() {
        let e = TrainEntry {
            image: format!("images/{i:03}.png"),
            mask: format!("masks/{i:03}.png"),
            features: format!("features/{i:03}.fmap"),
        };
        v.image.save(&dir.join(&e.image))?;
        save_mask(&dir.join(&e.mask), v.image.width, v.image.height, &v.mask)?;
        save_fmap(&dir.join(&e.features), &v.features)?;
        manifest.train.push(e);
    }
    for (i, t) in ds.test.iter().enumerate() {
        let e = TestEntry {
            image: format!("test/{i:03}.png"),
        };
        t.image.save(&dir.join(&e.image))?;
        manifest.test.push(e);
    }
    let cams: Vec<&Camera> = ds.train.iter().map(|v| &v.camera).chain(ds.test.iter().map(|t| &t.camera)).collect();
    write_cameras(&dir.join(CAMERAS_FILE), &cams)?;
    let text = toml::to_string(&manifest).map_err(|e| Error::Config(format!("manifest serialization: {e}")))?;
    let path = dir.join(MANIFEST_FILE);
    std::fs::write(&path, text).map_err(|e| Error::io(path, e))
}

fn existing(dir: &Path, rel: &str) -> Result<PathBuf> {
    let p = dir.join(rel);
    if p.is_file() {
        Ok(p)
    } else {
        Err(Error::MissingFile(p))
    }
}

/// Reads a dataset written by [`save_dataset`] or laid out by hand.
///
/// Feature maps coarser than their image are nearest-neighbour upsampled.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let mpath = existing(dir, MANIFEST_FILE)?;
    let text = std::fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let m: Manifest =
        toml::from_str(&text).map_err(|e| Error::InvalidInput(format!("{}: {}", mpath.display(), e.message())))?;
    if m.version != MANIFEST_VERSION {
        return Err(Error::InvalidInput(format!(
            "{}: unsupported manifest version {} (expected {MANIFEST_VERSION})",
            mpath.display(),
            m.version
        )));
    }
    if m.n_views == 0 || m.train.is_empty() {
        return Err(Error::InvalidInput("empty dataset".into()));
    }
    if m.train.len() != m.n_views || m.test.len() != m.n_test {
        return Err(Error::InvalidInput(format!(
            "manifest declares {} train / {} test views but lists {} / {}",
            m.n_views,
            m.n_test,
            m.train.len(),
            m.test.len()
        )));
    }
    let cams = read_cameras(&existing(dir, &m.cameras)?)?;
    let total = m.n_views + m.n_test;
    let mut by_id: Vec<Option<[f64; 16]>> = vec![None; total];
    for (id, v) in cams {
        if id >= total {
            return Err(Error::InvalidInput(format!("camera id {id} outside 0..{total}")));
        }
        if by_id[id].replace(v).is_some() {
            return Err(Error::InvalidInput(format!("camera id {id} listed twice")));
        }
    }
    let cam_for = |id: usize, w: usize, h: usize| -> Result<Camera> {
        let v = by_id[id].as_ref().ok_or_else(|| Error::InvalidInput(format!("no camera for view {id}")))?;
        make_camera(id, v, w, h)
    };

    let mut train = Vec::with_capacity(m.n_views);
    for (i, e) in m.train.iter().enumerate() {
        let image = Image::load(&existing(dir, &e.image)?)?;
        let (w, h) = (image.width, image.height);
        let mpath = existing(dir, &e.mask)?;
        let (mw, mh, mask) = load_mask(&mpath)?;
        if (mw, mh) != (w, h) {
            return Err(Error::Dimension(format!("{}: mask {mw}x{mh} for image {w}x{h}", mpath.display())));
        }
        let mut features = load_fmap(&existing(dir, &e.features)?)?;
        if (features.width, features.height) != (w, h) {
            features = nn_upsample(&features, h, w)?;
        }
        train.push(View {
            camera: cam_for(i, w, h)?,
            image,
            features,
            mask,
        });
    }
    let mut test = Vec::with_capacity(m.n_test);
    for (j, e) in m.test.iter().enumerate() {
        let image = Image::load(&existing(dir, &e.image)?)?;
        test.push(TestView {
            camera: cam_for(m.n_views + j, image.width, image.height)?,
            image,
        });
    }
    let ds = Dataset {
        config: m.scene,
        train,
        test,
    };
    ds.validate()?;
    Ok(ds)
}
