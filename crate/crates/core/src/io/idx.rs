//! MNIST IDX files (big-endian headers, raw unsigned bytes).

use std::fs::File;
use std::io::{BufReader, Read};
use std::path::{Path, PathBuf};

use crate::error::DataError;

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxImages {
    pub rows: usize,
    pub cols: usize,
    /// `count * rows * cols` pixels, image-major then row-major.
    pub pixels: Vec<u8>,
}

impl IdxImages {
    pub fn count(&self) -> usize {
        self.pixels
            .len()
            .checked_div(self.rows * self.cols)
            .unwrap_or(0)
    }

    pub fn image(&self, index: usize) -> &[u8] {
        let n = self.rows * self.cols;
        &self.pixels[index * n..][..n]
    }
}

fn read_u32_be(buf: &[u8], at: usize, what: &'static str) -> Result<u32, DataError> {
    let bytes = buf.get(at..at + 4).ok_or(DataError::Truncated {
        what,
        needed: at + 4,
        available: buf.len(),
    })?;
    Ok(u32::from_be_bytes(bytes.try_into().expect("4-byte slice")))
}

pub fn load_idx_images<R: Read>(mut reader: R) -> Result<IdxImages, DataError> {
    let mut buf = Vec::new();
    reader.read_to_end(&mut buf)?;
    let magic = read_u32_be(&buf, 0, "image header")?;
    if magic != IMAGE_MAGIC {
        return Err(DataError::BadMagic {
            expected: IMAGE_MAGIC,
            found: magic,
        });
    }
    let count = read_u32_be(&buf, 4, "image header")? as usize;
    let rows = read_u32_be(&buf, 8, "image header")? as usize;
    let cols = read_u32_be(&buf, 12, "image header")? as usize;
    let needed = 16 + count * rows * cols;
    if buf.len() < needed {
        return Err(DataError::Truncated {
            what: "image payload",
            needed,
            available: buf.len(),
        });
    }
    buf.truncate(needed);
    let pixels = buf.split_off(16);
    Ok(IdxImages { rows, cols, pixels })
}

pub fn load_idx_labels<R: Read>(mut reader: R) -> Result<Vec<u8>, DataError> {
    let mut buf = Vec::new();
    reader.read_to_end(&mut buf)?;
    let magic = read_u32_be(&buf, 0, "label header")?;
    if magic != LABEL_MAGIC {
        return Err(DataError::BadMagic {
            expected: LABEL_MAGIC,
            found: magic,
        });
    }
    let count = read_u32_be(&buf, 4, "label header")? as usize;
    let needed = 8 + count;
    if buf.len() < needed {
        return Err(DataError::Truncated {
            what: "label payload",
            needed,
            available: buf.len(),
        });
    }
    let labels = buf[8..needed].to_vec();
    if let Some((index, &value)) = labels.iter().enumerate().find(|(_, &v)| v > 9) {
        return Err(DataError::LabelOutOfRange { index, value });
    }
    Ok(labels)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    fn stems(self) -> (&'static str, &'static str) {
        match self {
            Split::Train => ("train-images", "train-labels"),
            Split::Test => ("t10k-images", "t10k-labels"),
        }
    }
}

/// Labelled 28x28 digit images.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MnistSet {
    pub images: IdxImages,
    pub labels: Vec<u8>,
}

impl MnistSet {
    pub fn new(images: IdxImages, labels: Vec<u8>) -> Result<Self, DataError> {
        if images.count() != labels.len() {
            return Err(DataError::CountMismatch {
                images: images.count(),
                labels: labels.len(),
            });
        }
        Ok(Self { images, labels })
    }

    /// Loads a split from `dir`, accepting both `train-images-idx3-ubyte`
    /// and `train-images.idx3-ubyte` spellings.
    pub fn load(dir: &Path, split: Split) -> Result<Self, DataError> {
        let (img_stem, lbl_stem) = split.stems();
        let images = load_idx_images(open(find_file(dir, img_stem, "idx3-ubyte"))?)?;
        let labels = load_idx_labels(open(find_file(dir, lbl_stem, "idx1-ubyte"))?)?;
        Self::new(images, labels)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image(&self, index: usize) -> &[u8] {
        self.images.image(index)
    }

    /// First `n` samples (or all, if fewer).
    pub fn truncated(&self, n: usize) -> Self {
        let n = n.min(self.len());
        let per = self.images.rows * self.images.cols;
        Self {
            images: IdxImages {
                rows: self.images.rows,
                cols: self.images.cols,
                pixels: self.images.pixels[..n * per].to_vec(),
            },
            labels: self.labels[..n].to_vec(),
        }
    }
}

fn find_file(dir: &Path, stem: &str, suffix: &str) -> PathBuf {
    let dashed = dir.join(format!("{stem}-{suffix}"));
    if dashed.exists() {
        return dashed;
    }
    let dotted = dir.join(format!("{stem}.{suffix}"));
    if dotted.exists() {
        dotted
    } else {
        dashed
    }
}

fn open(path: PathBuf) -> Result<BufReader<File>, DataError> {
    File::open(&path).map(BufReader::new).map_err(|e| {
        DataError::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header(magic: u32, dims: &[u32]) -> Vec<u8> {
        let mut v = magic.to_be_bytes().to_vec();
        for d in dims {
            v.extend_from_slice(&d.to_be_bytes());
        }
        v
    }

    #[test]
    fn one_image() {
        let mut bytes = header(IMAGE_MAGIC, &[1, 28, 28]);
        bytes.extend((0..784).map(|i| (i % 256) as u8));
        let imgs = load_idx_images(bytes.as_slice()).unwrap();
        assert_eq!(imgs.count(), 1);
        assert_eq!((imgs.rows, imgs.cols), (28, 28));
        assert_eq!(imgs.image(0)[300], 44);
    }

    #[test]
    fn row_major_order() {
        let mut bytes = header(IMAGE_MAGIC, &[1, 2, 2]);
        bytes.extend([1, 2, 3, 4]);
        let imgs = load_idx_images(bytes.as_slice()).unwrap();
        assert_eq!(imgs.image(0), &[1, 2, 3, 4]);
    }

    #[test]
    fn wrong_magic() {
        let bytes = header(LABEL_MAGIC, &[1, 28, 28]);
        assert!(matches!(
            load_idx_images(bytes.as_slice()),
            Err(DataError::BadMagic {
                expected: IMAGE_MAGIC,
                found: LABEL_MAGIC
            })
        ));
        let bytes = header(IMAGE_MAGIC, &[1]);
        assert!(matches!(
            load_idx_labels(bytes.as_slice()),
            Err(DataError::BadMagic { .. })
        ));
    }

    #[test]
    fn truncated_payloads() {
        let mut bytes = header(IMAGE_MAGIC, &[2, 2, 2]);
        bytes.extend([0; 7]);
        assert!(matches!(
            load_idx_images(bytes.as_slice()),
            Err(DataError::Truncated {
                needed: 24,
                available: 23,
                ..
            })
        ));
        assert!(matches!(
            load_idx_images(&[0u8, 0, 8][..]),
            Err(DataError::Truncated { .. })
        ));
        let mut bytes = header(LABEL_MAGIC, &[3]);
        bytes.extend([1, 2]);
        assert!(matches!(
            load_idx_labels(bytes.as_slice()),
            Err(DataError::Truncated { .. })
        ));
    }

    #[test]
    fn labels() {
        let mut bytes = header(LABEL_MAGIC, &[3]);
        bytes.extend([7, 0, 9]);
        assert_eq!(load_idx_labels(bytes.as_slice()).unwrap(), vec![7, 0, 9]);
        let mut bytes = header(LABEL_MAGIC, &[2]);
        bytes.extend([3, 10]);
        assert!(matches!(
            load_idx_labels(bytes.as_slice()),
            Err(DataError::LabelOutOfRange {
                index: 1,
                value: 10
            })
        ));
    }

    #[test]
    fn count_mismatch() {
        let imgs = IdxImages {
            rows: 1,
            cols: 1,
            pixels: vec![0, 0],
        };
        assert!(matches!(
            MnistSet::new(imgs, vec![1]),
            Err(DataError::CountMismatch { .. })
        ));
    }
}
