//! On-disk dataset layout.
//!
//! ```text
//! <dir>/manifest.json
//! <dir>/<tuple_id>/{comp.png, gt.png, m_fo.png, m_fs.png, m_bo.png, m_bs.png, meta.json}
//! ```
//!
//! Images are 8-bit RGB, masks single-channel 8-bit holding only 0 or 255.
//! Tuples are quantized before writing, so a write/read round trip is exact.

use super::{DataError, Domain, Image, ShadowTuple, TupleMeta};
use crate::geometry::Mask;
use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

pub const SCHEMA_VERSION: u32 = 1;
pub const GENERATOR_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub domain: Domain,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub generator_version: u32,
    pub tuples: Vec<ManifestEntry>,
}

/// A tuple together with its manifest id.
#[derive(Debug, Clone)]
pub struct DatasetEntry {
    pub id: String,
    pub tuple: ShadowTuple,
}

pub fn tuple_id(meta: &TupleMeta) -> String {
    format!("s{:010}_k{}", meta.seed, meta.foreground)
}

fn image_to_rgb8(img: &Image) -> image::RgbImage {
    let (h, w) = img.resolution();
    let mut out = image::RgbImage::new(w as u32, h as u32);
    for r in 0..h {
        for c in 0..w {
            let px = img.pixel(r, c);
            out.put_pixel(
                c as u32,
                r as u32,
                image::Rgb([
                    (px[0] * 255.0).round() as u8,
                    (px[1] * 255.0).round() as u8,
                    (px[2] * 255.0).round() as u8,
                ]),
            );
        }
    }
    out
}

fn rgb8_to_image(img: &image::RgbImage) -> Image {
    let (w, h) = img.dimensions();
    let data = Array3::from_shape_fn((h as usize, w as usize, 3), |(r, c, ch)| {
        img.get_pixel(c as u32, r as u32).0[ch] as f32 / 255.0
    });
    Image { data }
}

fn mask_to_luma8(mask: &Mask) -> image::GrayImage {
    let (h, w) = mask.resolution();
    let mut out = image::GrayImage::new(w as u32, h as u32);
    for ((r, c), v) in mask.data().indexed_iter() {
        out.put_pixel(c as u32, r as u32, image::Luma([if *v > 0.5 { 255 } else { 0 }]));
    }
    out
}

fn luma8_to_mask(img: &image::GrayImage, path: &Path) -> Result<Mask, DataError> {
    let (w, h) = img.dimensions();
    let mut data = Array2::<f32>::zeros((h as usize, w as usize));
    for (c, r, px) in img.enumerate_pixels() {
        data[(r as usize, c as usize)] = match px.0[0] {
            0 => 0.0,
            255 => 1.0,
            other => {
                return Err(DataError::CorruptDataset(format!(
                    "mask {} holds non-binary value {}",
                    path.display(),
                    other
                )))
            }
        };
    }
    Ok(Mask::new(data).expect("binary raster is a valid mask"))
}

fn save_png(path: &Path, img: image::DynamicImage) -> Result<(), DataError> {
    img.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

/// Writes tuples under `dir`, one subdirectory each, plus a manifest listing
/// ids in lexicographic order.
pub fn write_dataset(tuples: &[ShadowTuple], dir: &Path) -> Result<Manifest, DataError> {
    fs::create_dir_all(dir)?;
    let mut entries = Vec::with_capacity(tuples.len());
    for tuple in tuples {
        let id = tuple_id(&tuple.meta);
        let tdir = dir.join(&id);
        fs::create_dir_all(&tdir)?;
        save_png(
            &tdir.join("comp.png"),
            image::DynamicImage::ImageRgb8(image_to_rgb8(&tuple.composite)),
        )?;
        save_png(
            &tdir.join("gt.png"),
            image::DynamicImage::ImageRgb8(image_to_rgb8(&tuple.ground_truth)),
        )?;
        for (name, mask) in [
            ("m_fo.png", &tuple.m_fo),
            ("m_fs.png", &tuple.m_fs),
            ("m_bo.png", &tuple.m_bo),
            ("m_bs.png", &tuple.m_bs),
        ] {
            save_png(
                &tdir.join(name),
                image::DynamicImage::ImageLuma8(mask_to_luma8(mask)),
            )?;
        }
        fs::write(
            tdir.join("meta.json"),
            serde_json::to_string_pretty(&tuple.meta)?,
        )?;
        entries.push(ManifestEntry {
            id,
            domain: tuple.meta.domain,
        });
    }
    entries.sort_by(|a, b| a.id.cmp(&b.id));
    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        generator_version: GENERATOR_VERSION,
        tuples: entries,
    };
    fs::write(
        dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok(manifest)
}

fn load_rgb(path: &Path) -> Result<Image, DataError> {
    let img = image::open(path)
        .map_err(|e| DataError::CorruptDataset(format!("{}: {e}", path.display())))?;
    Ok(rgb8_to_image(&img.to_rgb8()))
}

fn load_mask(path: &Path) -> Result<Mask, DataError> {
    let img = image::open(path)
        .map_err(|e| DataError::CorruptDataset(format!("{}: {e}", path.display())))?;
    luma8_to_mask(&img.to_luma8(), path)
}

/// Reads a dataset directory back into memory. Tuples come back in
/// lexicographic id order regardless of manifest order on disk.
pub fn read_dataset(dir: &Path) -> Result<Vec<DatasetEntry>, DataError> {
    let manifest_path = dir.join("manifest.json");
    if !manifest_path.exists() {
        return Err(DataError::CorruptDataset(format!(
            "missing manifest at {}",
            manifest_path.display()
        )));
    }
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(&manifest_path)?)?;
    if manifest.schema_version != SCHEMA_VERSION {
        return Err(DataError::SchemaVersion {
            found: manifest.schema_version,
            expected: SCHEMA_VERSION,
        });
    }
    let mut ids: Vec<_> = manifest.tuples.clone();
    ids.sort_by(|a, b| a.id.cmp(&b.id));

    let mut out = Vec::with_capacity(ids.len());
    for entry in ids {
        let tdir = dir.join(&entry.id);
        let meta: TupleMeta = serde_json::from_str(&fs::read_to_string(tdir.join("meta.json"))?)?;
        if meta.generator_version != manifest.generator_version {
            return Err(DataError::CorruptDataset(format!(
                "tuple {} generator version mismatch",
                entry.id
            )));
        }
        let composite = load_rgb(&tdir.join("comp.png"))?;
        let ground_truth = load_rgb(&tdir.join("gt.png"))?;
        let m_fo = load_mask(&tdir.join("m_fo.png"))?;
        let m_fs = load_mask(&tdir.join("m_fs.png"))?;
        let m_bo = load_mask(&tdir.join("m_bo.png"))?;
        let m_bs = load_mask(&tdir.join("m_bs.png"))?;
        let shapes = [
            composite.resolution(),
            ground_truth.resolution(),
            m_fo.resolution(),
            m_fs.resolution(),
            m_bo.resolution(),
            m_bs.resolution(),
        ];
        if shapes.iter().any(|s| *s != shapes[0]) {
            return Err(DataError::CorruptDataset(format!(
                "tuple {} rasters disagree on resolution",
                entry.id
            )));
        }
        out.push(DatasetEntry {
            id: entry.id,
            tuple: ShadowTuple {
                composite,
                m_fo,
                m_fs,
                m_bo,
                m_bs,
                ground_truth,
                meta,
            },
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthdata::{generate_tuples, Domain, GeneratorConfig};

    #[test]
    fn write_read_round_trip_is_exact() {
        let config = GeneratorConfig::new(Domain::A, 64);
        let tuples = generate_tuples(&config, 9000, 10).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&tuples, dir.path()).unwrap();
        let back = read_dataset(dir.path()).unwrap();
        assert_eq!(back.len(), tuples.len());

        let mut originals: Vec<_> = tuples.iter().collect();
        originals.sort_by_key(|t| tuple_id(&t.meta));
        for (entry, original) in back.iter().zip(originals.iter()) {
            assert_eq!(entry.id, tuple_id(&original.meta));
            assert_eq!(entry.tuple.composite.data(), original.composite.data());
            assert_eq!(entry.tuple.ground_truth.data(), original.ground_truth.data());
            assert_eq!(entry.tuple.m_fo.data(), original.m_fo.data());
            assert_eq!(entry.tuple.m_fs.data(), original.m_fs.data());
            assert_eq!(entry.tuple.m_bo.data(), original.m_bo.data());
            assert_eq!(entry.tuple.m_bs.data(), original.m_bs.data());
            assert_eq!(
                serde_json::to_string(&entry.tuple.meta).unwrap(),
                serde_json::to_string(&original.meta).unwrap()
            );
        }
    }

    #[test]
    fn read_empty_dir_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            read_dataset(dir.path()),
            Err(DataError::CorruptDataset(_))
        ));
    }

    #[test]
    fn schema_version_mismatch_is_rejected() {
        let config = GeneratorConfig::new(Domain::B, 64);
        let tuples = generate_tuples(&config, 42, 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let mut manifest = write_dataset(&tuples, dir.path()).unwrap();
        manifest.schema_version = 99;
        std::fs::write(
            dir.path().join("manifest.json"),
            serde_json::to_string(&manifest).unwrap(),
        )
        .unwrap();
        assert!(matches!(
            read_dataset(dir.path()),
            Err(DataError::SchemaVersion { found: 99, .. })
        ));
    }

    #[test]
    fn missing_file_is_corrupt() {
        let config = GeneratorConfig::new(Domain::A, 64);
        let tuples = generate_tuples(&config, 77, 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let manifest = write_dataset(&tuples, dir.path()).unwrap();
        let victim = dir.path().join(&manifest.tuples[0].id).join("m_fs.png");
        std::fs::remove_file(victim).unwrap();
        assert!(read_dataset(dir.path()).is_err());
    }

    #[test]
    fn iteration_order_is_lexicographic_and_stable() {
        let config = GeneratorConfig::new(Domain::A, 64);
        let tuples = generate_tuples(&config, 500, 6).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&tuples, dir.path()).unwrap();
        let a: Vec<String> = read_dataset(dir.path()).unwrap().into_iter().map(|e| e.id).collect();
        let b: Vec<String> = read_dataset(dir.path()).unwrap().into_iter().map(|e| e.id).collect();
        assert_eq!(a, b);
        let mut sorted = a.clone();
        sorted.sort();
        assert_eq!(a, sorted);
    }
}
