//! MNIST IDX reader. Files may be gzip-compressed (`.gz` suffix); byte
//! offsets in errors then refer to the decompressed stream.

use std::fs::File;
use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;
use ndarray::Array2;

use super::{Dataset, Labels};
use crate::error::{Error, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;
const MNIST_CLASSES: usize = 10;

fn read_all(path: &Path) -> Result<Vec<u8>> {
    let io_err = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut file = File::open(path).map_err(io_err)?;
    let mut bytes = Vec::new();
    if path.extension().is_some_and(|e| e == "gz") {
        GzDecoder::new(file).read_to_end(&mut bytes).map_err(io_err)?;
    } else {
        file.read_to_end(&mut bytes).map_err(io_err)?;
    }
    Ok(bytes)
}

struct Cursor<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn err(&self, offset: usize, message: String) -> Error {
        Error::Parse {
            path: self.path.to_path_buf(),
            offset: offset as u64,
            message,
        }
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let end = self.pos + 4;
        let word = self
            .bytes
            .get(self.pos..end)
            .ok_or_else(|| self.err(self.bytes.len(), format!("truncated while reading {what}")))?;
        self.pos = end;
        Ok(u32::from_be_bytes(word.try_into().expect("four bytes")))
    }

    fn body(&mut self, len: usize) -> Result<&'a [u8]> {
        let end = self.pos + len;
        if end > self.bytes.len() {
            return Err(self.err(
                self.bytes.len(),
                format!(
                    "truncated: expected {len} data bytes from offset {}, file ends after {}",
                    self.pos,
                    self.bytes.len() - self.pos
                ),
            ));
        }
        let slice = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(slice)
    }

    fn expect_magic(&mut self, want: u32) -> Result<()> {
        let magic = self.u32("magic number")?;
        if magic != want {
            return Err(self.err(0, format!("bad magic number 0x{magic:08x}, expected 0x{want:08x}")));
        }
        Ok(())
    }
}

/// Parses an images file into a `(n, rows*cols)` matrix scaled to `[0, 1]`.
pub fn parse_images(path: &Path, bytes: &[u8]) -> Result<Array2<f64>> {
    let mut cur = Cursor { path, bytes, pos: 0 };
    cur.expect_magic(IMAGES_MAGIC)?;
    let n = cur.u32("image count")? as usize;
    let rows = cur.u32("row count")? as usize;
    let cols = cur.u32("column count")? as usize;
    let width = rows * cols;
    let body = cur.body(n * width)?;
    if cur.pos != bytes.len() {
        return Err(cur.err(cur.pos, format!("{} trailing bytes", bytes.len() - cur.pos)));
    }
    let values = body.iter().map(|&b| f64::from(b) / 255.0).collect();
    Ok(Array2::from_shape_vec((n, width), values).expect("sized above"))
}

/// Parses a labels file.
pub fn parse_labels(path: &Path, bytes: &[u8]) -> Result<Vec<usize>> {
    let mut cur = Cursor { path, bytes, pos: 0 };
    cur.expect_magic(LABELS_MAGIC)?;
    let n = cur.u32("label count")? as usize;
    let start = cur.pos;
    let body = cur.body(n)?;
    if cur.pos != bytes.len() {
        return Err(cur.err(cur.pos, format!("{} trailing bytes", bytes.len() - cur.pos)));
    }
    if let Some(i) = body.iter().position(|&b| usize::from(b) >= MNIST_CLASSES) {
        return Err(cur.err(start + i, format!("label {} is not a digit", body[i])));
    }
    Ok(body.iter().map(|&b| usize::from(b)).collect())
}

/// Loads an MNIST-format image/label file pair.
pub fn load_mnist_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let (images_path, labels_path) = (images_path.as_ref(), labels_path.as_ref());
    let inputs = parse_images(images_path, &read_all(images_path)?)?;
    let labels = parse_labels(labels_path, &read_all(labels_path)?)?;
    if inputs.nrows() != labels.len() {
        return Err(Error::Parse {
            path: labels_path.to_path_buf(),
            offset: 4,
            message: format!(
                "label count {} does not match image count {}",
                labels.len(),
                inputs.nrows()
            ),
        });
    }
    Dataset::new(
        "mnist",
        inputs,
        Labels::Class {
            values: labels,
            n_classes: MNIST_CLASSES,
        },
    )
}

/// Serializes images and labels in IDX format (used for fixtures).
pub fn encode_idx(images: &[Vec<u8>], rows: u32, cols: u32, labels: &[u8]) -> (Vec<u8>, Vec<u8>) {
    let mut img = Vec::new();
    img.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
    img.extend_from_slice(&(images.len() as u32).to_be_bytes());
    img.extend_from_slice(&rows.to_be_bytes());
    img.extend_from_slice(&cols.to_be_bytes());
    for image in images {
        img.extend_from_slice(image);
    }
    let mut lab = Vec::new();
    lab.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    lab.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    lab.extend_from_slice(labels);
    (img, lab)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn fixture() -> (Vec<u8>, Vec<u8>) {
        let a: Vec<u8> = (0..784).map(|i| (i % 256) as u8).collect();
        let b: Vec<u8> = (0..784).map(|i| 255 - (i % 256) as u8).collect();
        encode_idx(&[a, b], 28, 28, &[3, 7])
    }

    fn write(dir: &Path, name: &str, bytes: &[u8]) -> std::path::PathBuf {
        let p = dir.join(name);
        File::create(&p).unwrap().write_all(bytes).unwrap();
        p
    }

    #[test]
    fn two_image_fixture_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let (img, lab) = fixture();
        let d = load_mnist_idx(write(dir.path(), "i", &img), write(dir.path(), "l", &lab)).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.n_features(), 784);
        assert_eq!(d.labels().classes().unwrap(), &[3, 7]);
        assert_eq!(d.inputs()[[0, 255]], 1.0);
        assert_eq!(d.inputs()[[0, 1]], 1.0 / 255.0);
        assert_eq!(d.inputs()[[1, 0]], 1.0);
        assert_eq!(d.inputs()[[1, 256]], 1.0);
    }

    #[test]
    fn gzip_input_is_transparent() {
        let dir = tempfile::tempdir().unwrap();
        let (img, lab) = fixture();
        let gz = |bytes: &[u8]| {
            let mut e = flate2::write::GzEncoder::new(Vec::new(), flate2::Compression::fast());
            e.write_all(bytes).unwrap();
            e.finish().unwrap()
        };
        let d = load_mnist_idx(
            write(dir.path(), "i.gz", &gz(&img)),
            write(dir.path(), "l.gz", &gz(&lab)),
        )
        .unwrap();
        assert_eq!(d.len(), 2);
    }

    #[test]
    fn wrong_magic_is_named() {
        let (mut img, _) = fixture();
        img[3] = 0x01;
        let err = parse_images(Path::new("x"), &img).unwrap_err().to_string();
        assert!(err.contains("0x00000801"), "{err}");
        assert!(err.contains("byte offset 0"), "{err}");
    }

    #[test]
    fn truncation_reports_offset() {
        let (img, _) = fixture();
        let cut = &img[..100];
        let err = parse_images(Path::new("x"), cut).unwrap_err().to_string();
        assert!(err.contains("byte offset 100"), "{err}");
        assert!(err.contains("truncated"), "{err}");
    }

    #[test]
    fn count_mismatch_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let (img, _) = fixture();
        let (_, lab) = encode_idx(&[], 28, 28, &[1, 2, 3]);
        let err = load_mnist_idx(write(dir.path(), "i", &img), write(dir.path(), "l", &lab));
        assert!(matches!(err, Err(Error::Parse { .. })));
    }
}
