//! Content-addressed image storage rooted at a directory.
//!
//! [`ImageRef::path`] values are relative to the store root unless absolute.
//! Derived images are written as `<subdir>/<content hash>.png`, so writing the
//! same pixels twice is a no-op.

use std::fs;
use std::path::{Path, PathBuf};

use image::{ImageFormat, RgbImage};

use crate::error::{Error, Result};
use crate::imaging::{content_hash, Mask};
use crate::types::ImageRef;

#[derive(Debug, Clone)]
pub struct ImageStore {
    root: PathBuf,
}

impl ImageStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn resolve(&self, path: &str) -> PathBuf {
        let p = Path::new(path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    fn decode(&self, path: &str) -> Result<RgbImage> {
        let full = self.resolve(path);
        if !full.exists() {
            return Err(Error::io(
                &full,
                std::io::Error::new(std::io::ErrorKind::NotFound, "image not found"),
            ));
        }
        let img = image::open(&full).map_err(|source| Error::Image {
            path: full.clone(),
            source,
        })?;
        Ok(img.to_rgb8())
    }

    /// Decodes an image by path and builds its reference.
    pub fn open(&self, path: &str) -> Result<(RgbImage, ImageRef)> {
        let img = self.decode(path)?;
        let r = ImageRef {
            path: path.to_string(),
            width: img.width(),
            height: img.height(),
            content_hash: content_hash(&img),
        };
        Ok((img, r))
    }

    /// Decodes a referenced image and checks its pixel hash.
    pub fn load(&self, r: &ImageRef) -> Result<RgbImage> {
        let img = self.decode(&r.path)?;
        let found = content_hash(&img);
        if found != r.content_hash {
            return Err(Error::Integrity {
                path: r.path.clone(),
                expected: r.content_hash.clone(),
                found,
            });
        }
        Ok(img)
    }

    pub fn verify(&self, r: &ImageRef) -> Result<()> {
        self.load(r).map(|_| ())
    }

    pub fn load_mask(&self, path: &str) -> Result<Mask> {
        let full = self.resolve(path);
        let img = image::open(&full).map_err(|source| Error::Image {
            path: full.clone(),
            source,
        })?;
        Ok(Mask::from_gray(&img.to_luma8()))
    }

    pub fn save(&self, img: &RgbImage, subdir: &str) -> Result<ImageRef> {
        let hash = content_hash(img);
        let rel = format!("{subdir}/{hash}.png");
        let full = self.resolve(&rel);
        if !full.exists() {
            write_png_atomic(&full, |p| img.save_with_format(p, ImageFormat::Png))?;
        }
        Ok(ImageRef {
            path: rel,
            width: img.width(),
            height: img.height(),
            content_hash: hash,
        })
    }

    /// Stores a mask as single-channel PNG and returns its relative path.
    pub fn save_mask(&self, mask: &Mask, subdir: &str) -> Result<String> {
        let rel = format!("{subdir}/{}.png", mask.content_hash());
        let full = self.resolve(&rel);
        if !full.exists() {
            let gray = mask.to_gray();
            write_png_atomic(&full, |p| gray.save_with_format(p, ImageFormat::Png))?;
        }
        Ok(rel)
    }
}

fn write_png_atomic(
    full: &Path,
    write: impl FnOnce(&Path) -> image::ImageResult<()>,
) -> Result<()> {
    let dir = full.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let tmp = full.with_extension(format!("tmp{}.png", std::process::id()));
    write(&tmp).map_err(|source| Error::Image {
        path: tmp.clone(),
        source,
    })?;
    fs::rename(&tmp, full).map_err(|e| Error::io(full, e))
}
