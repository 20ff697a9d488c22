//! ASCII point-cloud files.
//!
//! ```text
//! apc N K
//! x y z label      (N lines; label = -1 when the cloud is unlabeled)
//! ```
//!
//! Coordinates are written in Rust's shortest round-trip decimal form, so a
//! write/read cycle reproduces every `f64` bit for bit.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{CloudError, PointCloud};
use crate::se3::Vec3;

pub fn write_apc<W: Write>(cloud: &PointCloud, out: W) -> Result<(), CloudError> {
    let mut out = BufWriter::new(out);
    writeln!(out, "apc {} {}", cloud.len(), cloud.num_parts())?;
    for (i, p) in cloud.points().iter().enumerate() {
        let label = cloud.labels().map_or(-1, |l| l[i] as i64);
        writeln!(out, "{:?} {:?} {:?} {label}", p.x, p.y, p.z)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_apc<R: Read>(input: R) -> Result<PointCloud, CloudError> {
    let reader = BufReader::new(input);
    let mut lines = reader.lines();
    let header = lines.next().ok_or_else(|| CloudError::Parse("missing header".into()))??;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 3 || fields[0] != "apc" {
        return Err(CloudError::Parse(format!("bad header '{header}'")));
    }
    let parse_count = |s: &str| s.parse::<usize>().map_err(|e| CloudError::Parse(format!("bad count '{s}': {e}")));
    let n = parse_count(fields[1])?;
    let k = parse_count(fields[2])?;
    let mut points = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    let mut unlabeled = 0usize;
    for (row, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let values: Vec<&str> = line.split_whitespace().collect();
        if values.len() != 4 {
            return Err(CloudError::Parse(format!("line {}: expected 4 fields", row + 2)));
        }
        let coord = |s: &str| s.parse::<f64>().map_err(|e| CloudError::Parse(format!("line {}: {e}", row + 2)));
        points.push(Vec3::new(coord(values[0])?, coord(values[1])?, coord(values[2])?));
        let label: i64 = values[3]
            .parse()
            .map_err(|e| CloudError::Parse(format!("line {}: {e}", row + 2)))?;
        if label < 0 {
            unlabeled += 1;
            labels.push(0);
        } else {
            labels.push(label as usize);
        }
    }
    if points.len() != n {
        return Err(CloudError::Parse(format!("header announces {n} points, found {}", points.len())));
    }
    if unlabeled == n {
        PointCloud::new(points)
    } else if unlabeled == 0 {
        PointCloud::with_labels(points, labels, k)
    } else {
        Err(CloudError::Parse("mixed labeled and unlabeled points".into()))
    }
}

pub fn write_apc_file(cloud: &PointCloud, path: impl AsRef<Path>) -> Result<(), CloudError> {
    write_apc(cloud, File::create(path)?)
}

pub fn read_apc_file(path: impl AsRef<Path>) -> Result<PointCloud, CloudError> {
    read_apc(File::open(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn unlabeled_uses_minus_one() {
        let cloud = PointCloud::new(vec![Vec3::new(0.1, -2.5, 3.0)]).unwrap();
        let mut buf = Vec::new();
        write_apc(&cloud, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), "apc 1 0\n0.1 -2.5 3.0 -1\n");
        assert_eq!(read_apc(&buf[..]).unwrap(), cloud);
    }

    #[test]
    fn malformed_inputs() {
        assert!(matches!(read_apc(&b"ply 1 0\n"[..]), Err(CloudError::Parse(_))));
        assert!(matches!(read_apc(&b"apc 2 0\n0 0 0 -1\n"[..]), Err(CloudError::Parse(_))));
        assert!(matches!(read_apc(&b"apc 1 1\n0 0 x 0\n"[..]), Err(CloudError::Parse(_))));
        assert!(matches!(read_apc(&b"apc 1 1\n0 0 0 3\n"[..]), Err(CloudError::LabelOutOfRange { .. })));
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(pts in proptest::collection::vec((any::<f64>(), any::<f64>(), any::<f64>(), 0usize..4), 1..40)) {
            let pts: Vec<_> = pts.into_iter().filter(|p| p.0.is_finite() && p.1.is_finite() && p.2.is_finite()).collect();
            prop_assume!(!pts.is_empty());
            let cloud = PointCloud::with_labels(
                pts.iter().map(|p| Vec3::new(p.0, p.1, p.2)).collect(),
                pts.iter().map(|p| p.3).collect(),
                4,
            ).unwrap();
            let mut buf = Vec::new();
            write_apc(&cloud, &mut buf).unwrap();
            let back = read_apc(&buf[..]).unwrap();
            for (a, b) in cloud.points().iter().zip(back.points()) {
                for k in 0..3 {
                    prop_assert_eq!(a[k].to_bits(), b[k].to_bits());
                }
            }
            prop_assert_eq!(cloud.labels(), back.labels());
        }
    }
}
