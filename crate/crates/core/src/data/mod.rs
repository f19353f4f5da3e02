//! Samples and the on-disk dataset layout:
//!
//! ```text
//! <root>/images/<id>.png   8-bit RGB
//! <root>/masks/<id>.png    8-bit grey: 0 cup, 128 disk rim, 255 background
//! <root>/labels.csv        optional, header `id,glaucoma`, values 0/1
//! ```

pub mod augment;
pub mod synth;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, RgbImage};

use crate::error::{Error, Result};
use crate::image::{Image, LabelMap, BACKGROUND, CUP, DISK_RING};

pub use augment::{apply_augment, augment, AugmentDraw, AugmentPolicy, CropDraw};
pub use synth::{synth_generate, synth_generate_detailed, Ellipse, SynthConfig, SynthSample};

/// Fundus image with its three-class annotation.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub image: Image,
    pub mask: LabelMap,
    /// Glaucoma flag, 1 for glaucoma.
    pub label: Option<u8>,
}

pub const GREY_CUP: u8 = 0;
pub const GREY_RING: u8 = 128;
pub const GREY_BACKGROUND: u8 = 255;

pub fn class_to_grey(class: u8) -> u8 {
    match class {
        CUP => GREY_CUP,
        DISK_RING => GREY_RING,
        _ => GREY_BACKGROUND,
    }
}

pub fn grey_to_class(grey: u8) -> Option<u8> {
    match grey {
        GREY_CUP => Some(CUP),
        GREY_RING => Some(DISK_RING),
        GREY_BACKGROUND => Some(BACKGROUND),
        _ => None,
    }
}

pub fn encode_mask(mask: &LabelMap) -> Vec<u8> {
    mask.data().iter().map(|&c| class_to_grey(c)).collect()
}

/// Decodes grey levels; `path` only labels the error.
pub fn decode_mask(h: usize, w: usize, grey: &[u8], path: &Path) -> Result<LabelMap> {
    let mut data = Vec::with_capacity(grey.len());
    for (i, &g) in grey.iter().enumerate() {
        let class = grey_to_class(g).ok_or_else(|| Error::IllegalGreyLevel {
            path: path.to_path_buf(),
            value: g,
            row: i / w.max(1),
            col: i % w.max(1),
        })?;
        data.push(class);
    }
    LabelMap::new(h, w, data)
}

fn open_image(path: &Path) -> Result<image::DynamicImage> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_rgb(path: &Path) -> Result<Image> {
    let img = open_image(path)?;
    let rgb = match img {
        image::DynamicImage::ImageRgb8(rgb) => rgb,
        other => {
            return Err(Error::Format(format!(
                "{} is {:?}, expected 8-bit RGB",
                path.display(),
                other.color()
            )))
        }
    };
    let (w, h) = rgb.dimensions();
    let data = rgb.into_raw().into_iter().map(|v| v as f32 / 255.0).collect();
    Image::new(h as usize, w as usize, 3, data)
}

pub fn read_mask(path: &Path) -> Result<LabelMap> {
    let img = open_image(path)?;
    let grey = match img {
        image::DynamicImage::ImageLuma8(g) => g,
        other => {
            return Err(Error::Format(format!(
                "{} is {:?}, expected 8-bit grayscale",
                path.display(),
                other.color()
            )))
        }
    };
    let (w, h) = grey.dimensions();
    decode_mask(h as usize, w as usize, grey.as_raw(), path)
}

fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn write_rgb(path: &Path, img: &Image) -> Result<()> {
    if img.channels() != 3 {
        return Err(Error::Format(format!("expected 3 channels, got {}", img.channels())));
    }
    let raw = img.data().iter().map(|&v| to_u8(v)).collect();
    let buf = RgbImage::from_raw(img.width() as u32, img.height() as u32, raw)
        .ok_or_else(|| Error::Contract("rgb buffer size".into()))?;
    ensure_parent(path)?;
    buf.save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_grey(path: &Path, h: usize, w: usize, grey: Vec<u8>) -> Result<()> {
    let buf = GrayImage::from_raw(w as u32, h as u32, grey)
        .ok_or_else(|| Error::Contract("grey buffer size".into()))?;
    ensure_parent(path)?;
    buf.save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_mask(path: &Path, mask: &LabelMap) -> Result<()> {
    write_grey(path, mask.height(), mask.width(), encode_mask(mask))
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|source| Error::Io {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    Ok(())
}

/// Loads one image/mask pair; the id is the image file stem.
pub fn load_sample(image_path: &Path, mask_path: &Path) -> Result<Sample> {
    let image = read_rgb(image_path)?;
    let mask = read_mask(mask_path)?;
    if (image.height(), image.width()) != mask.dims() {
        return Err(Error::DimensionMismatch {
            image: image_path.to_path_buf(),
            image_dims: (image.height(), image.width()),
            mask: mask_path.to_path_buf(),
            mask_dims: mask.dims(),
        });
    }
    let id = image_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(Sample {
        id,
        image,
        mask,
        label: None,
    })
}

/// Sorted ids of the `*.png` files in `dir`.
pub fn list_ids(dir: &Path) -> Result<Vec<String>> {
    let rd = fs::read_dir(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut ids = Vec::new();
    for entry in rd {
        let entry = entry.map_err(|source| Error::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        let p = entry.path();
        if p.extension().is_some_and(|e| e == "png") {
            if let Some(stem) = p.file_stem() {
                ids.push(stem.to_string_lossy().into_owned());
            }
        }
    }
    ids.sort();
    Ok(ids)
}

pub fn labels_path(root: &Path) -> PathBuf {
    root.join("labels.csv")
}

/// Reads `labels.csv` if present.
pub fn read_labels(path: &Path) -> Result<Option<BTreeMap<String, u8>>> {
    if !path.exists() {
        return Ok(None);
    }
    let csv_err = |msg: String| Error::Csv {
        path: path.to_path_buf(),
        msg,
    };
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_err(e.to_string()))?;
    let headers = rdr.headers().map_err(|e| csv_err(e.to_string()))?.clone();
    if headers.iter().collect::<Vec<_>>() != ["id", "glaucoma"] {
        return Err(csv_err(format!("expected header id,glaucoma, got {headers:?}")));
    }
    let mut out = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(e.to_string()))?;
        let label = match &rec[1] {
            "0" => 0,
            "1" => 1,
            other => return Err(csv_err(format!("label '{other}' for id '{}' is not 0 or 1", &rec[0]))),
        };
        out.insert(rec[0].to_string(), label);
    }
    Ok(Some(out))
}

pub fn write_labels(path: &Path, samples: &[Sample]) -> Result<()> {
    let mut text = String::from("id,glaucoma\n");
    for s in samples {
        if let Some(l) = s.label {
            text.push_str(&format!("{},{}\n", s.id, l));
        }
    }
    ensure_parent(path)?;
    fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Loads every `images/<id>.png` with its mask, sorted by id, attaching
/// labels when `labels.csv` exists.
pub fn load_dataset(root: &Path) -> Result<Vec<Sample>> {
    let images = root.join("images");
    let masks = root.join("masks");
    let labels = read_labels(&labels_path(root))?;
    list_ids(&images)?
        .into_iter()
        .map(|id| {
            let mut s = load_sample(&images.join(format!("{id}.png")), &masks.join(format!("{id}.png")))?;
            s.label = labels.as_ref().and_then(|l| l.get(&id).copied());
            Ok(s)
        })
        .collect()
}

pub fn write_dataset(root: &Path, samples: &[Sample]) -> Result<()> {
    for s in samples {
        write_rgb(&root.join("images").join(format!("{}.png", s.id)), &s.image)?;
        write_mask(&root.join("masks").join(format!("{}.png", s.id)), &s.mask)?;
    }
    if samples.iter().any(|s| s.label.is_some()) {
        write_labels(&labels_path(root), samples)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grey_levels_follow_rendering_convention() {
        assert_eq!(grey_to_class(0), Some(CUP));
        assert_eq!(grey_to_class(128), Some(DISK_RING));
        assert_eq!(grey_to_class(255), Some(BACKGROUND));
        assert_eq!(grey_to_class(127), None);
    }

    #[test]
    fn all_white_mask_is_background() {
        let m = decode_mask(4, 5, &[255; 20], Path::new("m.png")).unwrap();
        assert_eq!(m.count(BACKGROUND), 20);
    }

    #[test]
    fn illegal_grey_reports_position() {
        let mut g = vec![255u8; 12];
        g[7] = 17;
        match decode_mask(3, 4, &g, Path::new("x.png")).unwrap_err() {
            Error::IllegalGreyLevel { value, row, col, .. } => assert_eq!((value, row, col), (17, 1, 3)),
            e => panic!("{e:?}"),
        }
    }
}
