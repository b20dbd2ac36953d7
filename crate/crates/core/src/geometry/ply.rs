use std::fmt::Write as _;
use std::path::Path;

use super::cloud::StereoCloud;
use crate::error::{Error, Result};

/// ASCII PLY with `x y z` and, when `with_provenance`, `view row col`.
pub fn to_ply(cloud: &StereoCloud, with_provenance: bool) -> String {
    let mut s = String::new();
    s.push_str("ply\nformat ascii 1.0\n");
    writeln!(s, "element vertex {}", cloud.len()).unwrap();
    s.push_str("property double x\nproperty double y\nproperty double z\n");
    if with_provenance {
        s.push_str("property int view\nproperty int row\nproperty int col\n");
    }
    s.push_str("end_header\n");
    for i in 0..cloud.len() {
        let p = cloud.points[i];
        write!(s, "{} {} {}", p[0], p[1], p[2]).unwrap();
        if with_provenance {
            let (r, c) = cloud.pixel[i];
            write!(s, " {} {} {}", cloud.source_view[i], r, c).unwrap();
        }
        s.push('\n');
    }
    s
}

/// Reads ASCII PLY vertices; missing provenance properties default to zero.
pub fn from_ply(text: &str) -> Result<StereoCloud> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("ply") {
        return Err(Error::Format("missing ply magic".into()));
    }
    let mut count = None;
    let mut props: Vec<String> = Vec::new();
    let mut in_vertex = false;
    loop {
        let line = lines
            .next()
            .ok_or_else(|| Error::Format("unterminated ply header".into()))?
            .trim();
        let tok: Vec<&str> = line.split_whitespace().collect();
        match tok.as_slice() {
            ["format", fmt, ..] if *fmt != "ascii" => {
                return Err(Error::Format(format!("unsupported ply format {fmt}")))
            }
            ["element", name, n] => {
                in_vertex = *name == "vertex";
                if in_vertex {
                    count = Some(
                        n.parse::<usize>()
                            .map_err(|_| Error::Format(format!("bad vertex count {n}")))?,
                    );
                }
            }
            ["property", _, name] if in_vertex => props.push(name.to_string()),
            ["end_header"] => break,
            _ => {}
        }
    }
    let count = count.ok_or_else(|| Error::Format("ply has no vertex element".into()))?;
    let col = |name: &str| props.iter().position(|p| p == name);
    let (ix, iy, iz) = match (col("x"), col("y"), col("z")) {
        (Some(a), Some(b), Some(c)) => (a, b, c),
        _ => return Err(Error::Format("ply vertex lacks x/y/z".into())),
    };
    let (iv, ir, ic) = (col("view"), col("row"), col("col"));
    let mut cloud = StereoCloud::default();
    for n in 0..count {
        let line = lines
            .next()
            .ok_or_else(|| Error::Format(format!("ply ends after {n} of {count} vertices")))?;
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Format(format!("vertex {n}: {e}")))?;
        if vals.len() < props.len() {
            return Err(Error::Format(format!("vertex {n} has too few values")));
        }
        let get = |i: Option<usize>| i.map_or(0, |i| vals[i] as usize);
        cloud.push([vals[ix], vals[iy], vals[iz]], get(iv), (get(ir), get(ic)));
    }
    Ok(cloud)
}

pub fn save_ply(cloud: &StereoCloud, path: &Path, with_provenance: bool) -> Result<()> {
    std::fs::write(path, to_ply(cloud, with_provenance)).map_err(|e| Error::io(path, e))
}

pub fn load_ply(path: &Path) -> Result<StereoCloud> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_ply(&text)
}
