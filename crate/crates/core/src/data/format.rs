//! `FND1` dataset text format.
//!
//! ```text
//! FND1,<h>,<w>,<count>
//! <label>,<p_0>,...,<p_{h·w−1}>
//! ```
//!
//! One line per image, pixels row-major in `[0, 1]`, LF line endings.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::{DatasetSplit, LabeledImage, Splits};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &str = "FND1";

pub fn write_dataset<W: Write>(mut out: W, images: &[LabeledImage]) -> Result<()> {
    let (h, w) = images.first().map_or((16, 16), |i| (i.height(), i.width()));
    writeln!(out, "{MAGIC},{h},{w},{}", images.len())?;
    let mut line = String::new();
    for img in images {
        if (img.height(), img.width()) != (h, w) {
            return Err(Error::shape("write_dataset", img.pixels.shape(), &[1, h, w]));
        }
        line.clear();
        line.push_str(&img.label.to_string());
        for p in img.pixels.data() {
            line.push(',');
            // `Display` for f64 is the shortest representation that parses back exactly.
            line.push_str(&p.to_string());
        }
        line.push('\n');
        out.write_all(line.as_bytes())?;
    }
    out.flush()?;
    Ok(())
}

pub fn save_dataset(path: impl AsRef<Path>, images: &[LabeledImage]) -> Result<()> {
    write_dataset(BufWriter::new(File::create(path)?), images)
}

/// Parses a dataset; image ids are row indices.
pub fn read_dataset<R: BufRead>(input: R) -> Result<Vec<LabeledImage>> {
    let mut lines = input.lines();
    let header = lines.next().transpose()?.ok_or_else(|| Error::Parse {
        line: 1,
        msg: "missing header".into(),
    })?;
    let fields: Vec<&str> = header.trim_end_matches('\r').split(',').collect();
    let bad_header = || Error::Parse {
        line: 1,
        msg: format!("malformed header '{header}', expected {MAGIC},<h>,<w>,<count>"),
    };
    if fields.len() != 4 || fields[0] != MAGIC {
        return Err(bad_header());
    }
    let parse_dim = |s: &str| s.parse::<usize>().map_err(|_| bad_header());
    let (h, w, count) = (parse_dim(fields[1])?, parse_dim(fields[2])?, parse_dim(fields[3])?);
    if h == 0 || w == 0 {
        return Err(bad_header());
    }

    let mut images = Vec::with_capacity(count);
    for (idx, line) in lines.enumerate() {
        let line_no = idx + 2;
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split(',');
        let label_str = parts.next().unwrap_or_default();
        let label = match label_str {
            "0" => 0,
            "1" => 1,
            other => {
                return Err(Error::Parse {
                    line: line_no,
                    msg: format!("unknown label '{other}' (row {})", images.len()),
                })
            }
        };
        let mut pixels = Vec::with_capacity(h * w);
        for tok in parts {
            let v: f64 = tok.parse().map_err(|_| Error::Parse {
                line: line_no,
                msg: format!("invalid pixel '{tok}'"),
            })?;
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Parse {
                    line: line_no,
                    msg: format!("pixel {v} outside [0, 1]"),
                });
            }
            pixels.push(v);
        }
        if pixels.len() != h * w {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("expected {} pixels, found {}", h * w, pixels.len()),
            });
        }
        let id = images.len();
        images.push(LabeledImage {
            id,
            label,
            pixels: Tensor::new(vec![1, h, w], pixels)?,
        });
    }
    if images.len() != count {
        return Err(Error::Parse {
            line: 1,
            msg: format!("header declares {count} images, found {}", images.len()),
        });
    }
    Ok(images)
}

pub fn load_external(path: impl AsRef<Path>) -> Result<Vec<LabeledImage>> {
    read_dataset(BufReader::new(File::open(path)?))
}

pub const SPLIT_FILES: [&str; 3] = ["train.fnd", "val.fnd", "test.fnd"];

/// Writes `train.fnd`, `val.fnd` and `test.fnd` into `dir`.
pub fn save_splits(dir: impl AsRef<Path>, splits: &Splits) -> Result<()> {
    let dir = dir.as_ref();
    for (file, split) in SPLIT_FILES.iter().zip([&splits.train, &splits.val, &splits.test]) {
        save_dataset(dir.join(file), &split.images)?;
    }
    Ok(())
}

/// Reads the three split files written by [`save_splits`].
pub fn load_splits(dir: impl AsRef<Path>) -> Result<Splits> {
    let dir = dir.as_ref();
    let load = |file: &str, name: &str| -> Result<DatasetSplit> {
        Ok(DatasetSplit::new(name, load_external(dir.join(file))?))
    };
    Ok(Splits {
        train: load(SPLIT_FILES[0], "train")?,
        val: load(SPLIT_FILES[1], "val")?,
        test: load(SPLIT_FILES[2], "test")?,
    })
}
