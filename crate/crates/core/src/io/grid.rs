use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::layers::{InstanceMap, SegmentationMask};

fn ferr(line: usize, msg: impl std::fmt::Display) -> Error {
    Error::Format(format!("line {line}: {msg}"))
}

/// Parses `H W N` followed by `H` rows of `W` integers below `N`.
fn parse_grid(text: &str, what: &str) -> Result<(usize, usize, usize, Vec<u32>)> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (hl, header) = lines.next().ok_or_else(|| ferr(1, format!("empty {what} file")))?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(|t| t.parse::<usize>().map_err(|_| ferr(hl + 1, format!("bad header value `{t}`"))))
        .collect::<Result<_>>()?;
    let &[h, w, n] = dims.as_slice() else {
        return Err(ferr(hl + 1, "header must be `H W N`"));
    };
    if h == 0 || w == 0 || n == 0 {
        return Err(ferr(hl + 1, "H, W and N must be positive"));
    }
    let mut values = Vec::with_capacity(h * w);
    let mut rows = 0;
    for (i, line) in lines {
        if rows == h {
            return Err(ferr(i + 1, format!("more than {h} rows")));
        }
        let before = values.len();
        for t in line.split_whitespace() {
            let v: u32 = t.parse().map_err(|_| ferr(i + 1, format!("bad value `{t}`")))?;
            if v as usize >= n {
                return Err(ferr(i + 1, format!("value {v} out of range for N={n}")));
            }
            values.push(v);
        }
        if values.len() - before != w {
            return Err(ferr(i + 1, format!("expected {w} values, found {}", values.len() - before)));
        }
        rows += 1;
    }
    if rows != h {
        return Err(ferr(text.lines().count(), format!("expected {h} rows, found {rows}")));
    }
    Ok((h, w, n, values))
}

fn write_grid(h: usize, w: usize, n: usize, values: &[u32]) -> String {
    let mut s = format!("{h} {w} {n}\n");
    for row in values.chunks(w) {
        for (j, v) in row.iter().enumerate() {
            if j > 0 {
                s.push(' ');
            }
            let _ = write!(s, "{v}");
        }
        s.push('\n');
    }
    s
}

pub fn parse_mask(text: &str) -> Result<SegmentationMask> {
    let (h, w, n, labels) = parse_grid(text, "mask")?;
    SegmentationMask::new(h, w, n, labels)
}

pub fn format_mask(m: &SegmentationMask) -> String {
    write_grid(m.height(), m.width(), m.num_classes(), m.labels())
}

/// Instance maps use the mask layout; `N` bounds the instance ids.
pub fn parse_instances(text: &str) -> Result<InstanceMap> {
    let (h, w, _, ids) = parse_grid(text, "instance map")?;
    InstanceMap::new(h, w, ids)
}

pub fn format_instances(m: &InstanceMap) -> String {
    let n = m.ids().iter().max().map_or(1, |&v| v as usize + 1);
    write_grid(m.height(), m.width(), n, m.ids())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_and_errors() {
        let m = SegmentationMask::new(2, 3, 4, vec![0, 1, 2, 3, 3, 0]).unwrap();
        let text = format_mask(&m);
        assert_eq!(text, "2 3 4\n0 1 2\n3 3 0\n");
        assert_eq!(parse_mask(&text).unwrap(), m);
        for bad in ["", "2 3\n", "2 2 2\n0 1\n", "2 2 2\n0 1\n1 2\n", "1 2 2\n0 1 1\n", "1 1 1\n0\n0\n"] {
            assert!(matches!(parse_mask(bad), Err(Error::Format(_))), "{bad:?}");
        }
        let inst = InstanceMap::new(1, 3, vec![0, 5, 5]).unwrap();
        assert_eq!(parse_instances(&format_instances(&inst)).unwrap(), inst);
    }
}
