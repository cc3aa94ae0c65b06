//! Prototype-bank text format.
//!
//! ```text
//! #protobank v1 D=<int> K=<int> s=<float> m=<float>
//! <class>,<k>,v0,...,v{D-1}      (2K lines)
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::Array2;

use super::PrototypeBank;
use crate::error::{Error, Result};
use crate::feature_store::table::{fmt_f64, parse_header};
use crate::feature_store::Label;

const TAG: &str = "#protobank";

pub fn write_prototype_bank(bank: &PrototypeBank) -> String {
    let mut out = format!(
        "{TAG} v1 D={} K={} s={} m={}\n",
        bank.dimension(),
        bank.k(),
        fmt_f64(bank.scale),
        fmt_f64(bank.margin)
    );
    for label in Label::BOTH {
        for (k, row) in bank.centroids(label).rows().into_iter().enumerate() {
            let _ = write!(out, "{},{k}", label.index());
            for v in row {
                let _ = write!(out, ",{}", fmt_f64(*v));
            }
            out.push('\n');
        }
    }
    out
}

pub fn save_prototype_bank(bank: &PrototypeBank, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, write_prototype_bank(bank)).map_err(|e| Error::io(path, e))
}

pub fn load_prototype_bank(path: impl AsRef<Path>) -> Result<PrototypeBank> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_prototype_bank(&text, path)
}

pub fn parse_prototype_bank(text: &str, path: &Path) -> Result<PrototypeBank> {
    let err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| err(1, "missing header".into()))?;
    let fields = parse_header(header, TAG, &["D", "K", "s", "m"]).map_err(|m| err(1, m))?;
    let int = |i: usize| -> Result<usize> {
        fields[i]
            .1
            .parse::<usize>()
            .ok()
            .filter(|&v| v > 0)
            .ok_or_else(|| err(1, format!("invalid {}", fields[i].0)))
    };
    let float = |i: usize| -> Result<f64> {
        fields[i]
            .1
            .parse::<f64>()
            .map_err(|_| err(1, format!("invalid {}", fields[i].0)))
    };
    let (dim, k, scale, margin) = (int(0)?, int(1)?, float(2)?, float(3)?);

    let mut centroids = [Array2::<f64>::zeros((k, dim)), Array2::<f64>::zeros((k, dim))];
    let mut seen = [vec![false; k], vec![false; k]];
    for (i, raw) in lines {
        let lineno = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        if cols.len() != dim + 2 {
            return Err(err(lineno, format!("expected {} columns, found {}", dim + 2, cols.len())));
        }
        let class = cols[0]
            .parse::<usize>()
            .ok()
            .and_then(Label::from_index)
            .ok_or_else(|| err(lineno, format!("class must be 0 or 1, found `{}`", cols[0])))?;
        let idx = cols[1]
            .parse::<usize>()
            .ok()
            .filter(|&v| v < k)
            .ok_or_else(|| err(lineno, format!("sub-centroid index `{}` out of range", cols[1])))?;
        if std::mem::replace(&mut seen[class.index()][idx], true) {
            return Err(err(lineno, format!("duplicate centroid ({},{idx})", class.index())));
        }
        for (d, v) in cols[2..].iter().enumerate() {
            centroids[class.index()][[idx, d]] = v
                .parse()
                .map_err(|_| err(lineno, format!("non-numeric value `{v}`")))?;
        }
    }
    if seen.iter().flatten().any(|s| !s) {
        return Err(err(1, format!("expected {} centroid rows", 2 * k)));
    }
    let [bf, sp] = centroids;
    PrototypeBank::new(bf, sp, scale, margin).map_err(|e| err(1, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn round_trip() {
        let b = PrototypeBank::from_unnormalized(
            array![[1.0, 2.0, 3.0], [0.1, -0.4, 0.2]],
            array![[0.0, 0.0, 1.0], [1.0 / 3.0, 0.5, 0.0]],
            30.0,
            0.4321,
        )
        .unwrap();
        let text = write_prototype_bank(&b);
        assert!(text.starts_with("#protobank v1 D=3 K=2 s="));
        let back = parse_prototype_bank(&text, Path::new("b")).unwrap();
        assert_eq!(back, b);
    }

    #[test]
    fn missing_and_duplicate_rows() {
        let head = "#protobank v1 D=2 K=1 s=30 m=0.5\n";
        assert!(parse_prototype_bank(&format!("{head}0,0,1,0\n"), Path::new("b")).is_err());
        let dup = format!("{head}0,0,1,0\n0,0,1,0\n1,0,0,1\n");
        let e = parse_prototype_bank(&dup, Path::new("b")).unwrap_err();
        assert!(matches!(e, Error::Parse { line: 3, .. }));
        let ok = format!("{head}1,0,0,1\n0,0,1,0\n");
        assert!(parse_prototype_bank(&ok, Path::new("b")).is_ok());
    }
}
