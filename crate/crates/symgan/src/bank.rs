//! Symbol bank directories: `<class>/*.png` plus `<class>/anchors.csv` with
//! header `file,anchor_x,anchor_y,height_staff_spaces`. Images without an
//! anchor record get [`default_anchor`].

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use symgan_core::engraver::{default_anchor, BankEntry, SymbolBank};
use symgan_core::image::GrayImage;

use crate::error::{Error, Result};
use crate::imageio::{file_name, list_dirs, list_images, load_gray, save_png};

pub const ANCHORS_FILE: &str = "anchors.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorRecord {
    pub file: String,
    pub anchor_x: f32,
    pub anchor_y: f32,
    pub height_staff_spaces: f32,
}

/// Flips dark-on-light images so ink is high, judging by the border.
pub fn ink_positive(img: &GrayImage) -> GrayImage {
    let (w, h) = img.dims();
    if w == 0 || h == 0 {
        return img.clone();
    }
    let mut sum = 0.0f64;
    let mut n = 0usize;
    for x in 0..w {
        sum += (img.get(x, 0) + img.get(x, h - 1)) as f64;
        n += 2;
    }
    for y in 0..h {
        sum += (img.get(0, y) + img.get(w - 1, y)) as f64;
        n += 2;
    }
    if sum / n as f64 > 0.5 {
        img.invert()
    } else {
        img.clone()
    }
}

fn read_anchors(path: &Path) -> Result<BTreeMap<String, AnchorRecord>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::parse(path, e))?;
    let mut out = BTreeMap::new();
    for rec in rdr.deserialize::<AnchorRecord>() {
        let rec = rec.map_err(|e| Error::parse(path, e))?;
        out.insert(rec.file.clone(), rec);
    }
    Ok(out)
}

pub fn load_bank(dir: &Path) -> Result<SymbolBank> {
    if !dir.is_dir() {
        return Err(Error::MissingPath {
            what: "symbol bank",
            path: dir.to_path_buf(),
        });
    }
    let mut bank = SymbolBank::new();
    for class_dir in list_dirs(dir)? {
        let class = file_name(&class_dir);
        let anchors_path = class_dir.join(ANCHORS_FILE);
        let anchors = if anchors_path.is_file() { read_anchors(&anchors_path)? } else { BTreeMap::new() };
        for f in list_images(&class_dir)? {
            let image = ink_positive(&load_gray(&f)?);
            let (anchor, height) = match anchors.get(&file_name(&f)) {
                Some(r) => ((r.anchor_x, r.anchor_y), r.height_staff_spaces),
                None => default_anchor(&class, &image),
            };
            bank.insert(
                &class,
                BankEntry {
                    image,
                    anchor,
                    height_staff_spaces: height,
                },
            );
        }
    }
    Ok(bank)
}

/// Writes one class folder of a bank: images plus the anchor sidecar.
pub fn save_class(dir: &Path, class: &str, entries: &[(String, BankEntry)]) -> Result<()> {
    let class_dir = dir.join(class);
    let mut records = Vec::with_capacity(entries.len());
    for (file, e) in entries {
        save_png(&class_dir.join(file), &e.image)?;
        records.push(AnchorRecord {
            file: file.clone(),
            anchor_x: e.anchor.0,
            anchor_y: e.anchor.1,
            height_staff_spaces: e.height_staff_spaces,
        });
    }
    std::fs::create_dir_all(&class_dir).map_err(Error::io(&class_dir))?;
    let path = class_dir.join(ANCHORS_FILE);
    let mut w = csv::Writer::from_path(&path).map_err(|e| Error::parse(&path, e))?;
    for r in &records {
        w.serialize(r).map_err(|e| Error::parse(&path, e))?;
    }
    w.flush().map_err(Error::io(&path))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bank_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let img = GrayImage::from_fn(8, 12, |x, y| if x > 2 && y > 1 && y < 10 { 1.0 } else { 0.0 });
        let entry = BankEntry {
            image: img.clone(),
            anchor: (4.5, 9.25),
            height_staff_spaces: 3.5,
        };
        save_class(dir.path(), "quarternoteup", &[("0000.png".into(), entry.clone())]).unwrap();
        // an image without anchor record and with dark-on-light polarity
        save_png(&dir.path().join("barline/a.png"), &img.invert()).unwrap();
        let bank = load_bank(dir.path()).unwrap();
        assert_eq!(bank.classes["quarternoteup"], vec![entry]);
        let b = &bank.classes["barline"][0];
        assert_eq!(b.image, img);
        assert_eq!(b.height_staff_spaces, 4.0);
    }
}
