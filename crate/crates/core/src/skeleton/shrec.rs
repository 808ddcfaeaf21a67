//! SHREC'17 Track layout.
//!
//! ```text
//! <root>/train_gestures.txt, <root>/test_gestures.txt
//!     gesture finger subject essai label14 label28 frames   (1-based)
//! <root>/gesture_<g>/finger_<f>/subject_<s>/essai_<e>/skeletons_world.txt
//!     one frame per line: 22 joints x (x y z)
//! ```
//! DHG-14/28 ships the same per-sequence layout.

use std::fs;
use std::path::{Path, PathBuf};

use super::SkeletonSequence;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const TRAIN_INDEX: &str = "train_gestures.txt";
pub const TEST_INDEX: &str = "test_gestures.txt";
pub const SHREC_JOINTS: usize = 22;

/// One index row, kept 1-based as in the file.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct IndexEntry {
    pub gesture: u32,
    pub finger: u32,
    pub subject: u32,
    pub essai: u32,
    pub label14: u32,
    pub label28: u32,
    pub frames: usize,
}

impl IndexEntry {
    pub fn coordinate_path(&self, root: &Path) -> PathBuf {
        root.join(format!("gesture_{}", self.gesture))
            .join(format!("finger_{}", self.finger))
            .join(format!("subject_{}", self.subject))
            .join(format!("essai_{}", self.essai))
            .join("skeletons_world.txt")
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Parse index rows; blank lines are skipped.
pub fn parse_index(path: &Path, text: &str) -> Result<Vec<IndexEntry>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fail = |msg: String| Error::Format {
            path: path.to_path_buf(),
            line: n + 1,
            msg,
        };
        let fields: Vec<u64> = line
            .split_whitespace()
            .map(|f| f.parse::<u64>().map_err(|_| fail(format!("not an integer: {f:?}"))))
            .collect::<Result<_>>()?;
        if fields.len() != 7 {
            return Err(fail(format!("expected 7 fields, found {}", fields.len())));
        }
        if fields[4] == 0 || fields[5] == 0 {
            return Err(fail("labels are 1-based".into()));
        }
        out.push(IndexEntry {
            gesture: fields[0] as u32,
            finger: fields[1] as u32,
            subject: fields[2] as u32,
            essai: fields[3] as u32,
            label14: fields[4] as u32,
            label28: fields[5] as u32,
            frames: fields[6] as usize,
        });
    }
    Ok(out)
}

/// Parse a coordinate file into `(3, T, V)`.
pub fn parse_coordinates(path: &Path, text: &str, joints: usize) -> Result<Tensor<f64>> {
    let mut frames: Vec<Vec<f64>> = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fail = |msg: String| Error::Format {
            path: path.to_path_buf(),
            line: n + 1,
            msg,
        };
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|f| f.parse::<f64>().map_err(|_| fail(format!("not a number: {f:?}"))))
            .collect::<Result<_>>()?;
        if vals.len() != 3 * joints {
            return Err(fail(format!("expected {} values, found {}", 3 * joints, vals.len())));
        }
        if vals.iter().any(|x| !x.is_finite()) {
            return Err(Error::Integrity(format!("{}:{}: non-finite coordinate", path.display(), n + 1)));
        }
        frames.push(vals);
    }
    let t = frames.len();
    let mut data = vec![0.0; 3 * t * joints];
    for (ti, f) in frames.iter().enumerate() {
        for j in 0..joints {
            for c in 0..3 {
                data[(c * t + ti) * joints + j] = f[3 * j + c];
            }
        }
    }
    Tensor::new(&[3, t, joints], data)
}

/// Load every sequence listed in `root/<index>`.
pub fn parse_shrec(root: &Path, index: &str) -> Result<Vec<SkeletonSequence>> {
    let index_path = root.join(index);
    let entries = parse_index(&index_path, &read(&index_path)?)?;
    entries
        .iter()
        .map(|e| {
            let path = e.coordinate_path(root);
            let coords = parse_coordinates(&path, &read(&path)?, SHREC_JOINTS)?;
            let t = coords.shape()[1];
            if t != e.frames {
                return Err(Error::Integrity(format!(
                    "{}: index says {} frames, file has {t}",
                    path.display(),
                    e.frames
                )));
            }
            SkeletonSequence::new(
                coords,
                (e.label14 - 1) as usize,
                (e.label28 - 1) as usize,
                e.subject,
                e.essai,
            )
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_row_converts_to_zero_based() {
        let e = parse_index(Path::new("idx"), "1 1 1 1 1 1 89\n").unwrap();
        assert_eq!(e[0].frames, 89);
        assert_eq!(e[0].label14, 1);
    }

    #[test]
    fn index_arity_error_names_line() {
        let err = parse_index(Path::new("idx"), "1 1 1 1 1 1 89\n\n1 2 3\n").unwrap_err();
        match err {
            Error::Format { line, .. } => assert_eq!(line, 3),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn coordinate_line_arity() {
        let good: Vec<String> = (0..66).map(|i| format!("{}.5", i)).collect();
        let t = parse_coordinates(Path::new("c"), &good.join(" "), 22).unwrap();
        assert_eq!(t.shape(), &[3, 1, 22]);
        assert_eq!(t.at(&[1, 0, 2]), 7.5);
        let short = good[..65].join(" ");
        assert!(matches!(
            parse_coordinates(Path::new("c"), &short, 22),
            Err(Error::Format { line: 1, .. })
        ));
        let nan = good.iter().enumerate().map(|(i, s)| if i == 3 { "NaN".to_string() } else { s.clone() }).collect::<Vec<_>>();
        assert!(matches!(
            parse_coordinates(Path::new("c"), &nan.join(" "), 22),
            Err(Error::Integrity(_))
        ));
    }
}
