//! PLY persistence in the common Gaussian-splatting vertex layout, and a
//! reader for sparse initialization points.

use super::gaussian::{Gaussian3D, GaussianCloud, SH_COEFFS, SH_MAX_DEGREE};
use super::{GsError, Result};
use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

const DEGREE_COMMENT: &str = "active_sh_degree";
const REST: usize = (SH_COEFFS - 1) * 3;

fn property_names() -> Vec<String> {
    let mut names: Vec<String> = ["x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2"].map(String::from).to_vec();
    names.extend((0..REST).map(|i| format!("f_rest_{i}")));
    names.push("opacity".into());
    names.extend((0..3).map(|i| format!("scale_{i}")));
    names.extend((0..4).map(|i| format!("rot_{i}")));
    names
}

/// Writes a binary little-endian PLY with 59 float properties per vertex.
/// The active SH degree is kept in a header comment.
pub fn save_ply(cloud: &GaussianCloud, path: &Path) -> Result<()> {
    let io_err = |source| GsError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut w = BufWriter::new(File::create(path).map_err(io_err)?);
    let mut header = format!(
        "ply\nformat binary_little_endian 1.0\ncomment {DEGREE_COMMENT} {}\nelement vertex {}\n",
        cloud.sh_degree(),
        cloud.len()
    );
    for name in property_names() {
        header.push_str(&format!("property float {name}\n"));
    }
    header.push_str("end_header\n");
    w.write_all(header.as_bytes()).map_err(io_err)?;
    let mut row = Vec::with_capacity(59);
    for g in &cloud.gaussians {
        row.clear();
        row.extend_from_slice(&g.position);
        row.extend_from_slice(&g.sh[0]);
        for c in 0..3 {
            row.extend((1..SH_COEFFS).map(|k| g.sh[k][c]));
        }
        row.push(g.opacity_logit);
        row.extend_from_slice(&g.log_scale);
        row.extend_from_slice(&g.rotation);
        for v in &row {
            w.write_all(&v.to_le_bytes()).map_err(io_err)?;
        }
    }
    w.flush().map_err(io_err)
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "char" | "int8" => Self::I8,
            "uchar" | "uint8" => Self::U8,
            "short" | "int16" => Self::I16,
            "ushort" | "uint16" => Self::U16,
            "int" | "int32" => Self::I32,
            "uint" | "uint32" => Self::U32,
            "float" | "float32" => Self::F32,
            "double" | "float64" => Self::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Self::I8 | Self::U8 => 1,
            Self::I16 | Self::U16 => 2,
            Self::I32 | Self::U32 | Self::F32 => 4,
            Self::F64 => 8,
        }
    }

    fn decode(self, b: &[u8], big_endian: bool) -> f64 {
        macro_rules! num {
            ($t:ty, $n:expr) => {{
                let arr: [u8; $n] = b.try_into().unwrap();
                (if big_endian { <$t>::from_be_bytes(arr) } else { <$t>::from_le_bytes(arr) }) as f64
            }};
        }
        match self {
            Self::I8 => b[0] as i8 as f64,
            Self::U8 => b[0] as f64,
            Self::I16 => num!(i16, 2),
            Self::U16 => num!(u16, 2),
            Self::I32 => num!(i32, 4),
            Self::U32 => num!(u32, 4),
            Self::F32 => num!(f32, 4),
            Self::F64 => num!(f64, 8),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Format {
    Ascii,
    BinaryLe,
    BinaryBe,
}

/// Vertex table of a PLY file. Values are widened to f64, which is exact
/// for every supported scalar type.
struct VertexTable {
    names: Vec<String>,
    rows: Vec<Vec<f64>>,
    comments: Vec<String>,
}

impl VertexTable {
    fn column(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

fn read_vertices(path: &Path) -> Result<VertexTable> {
    let header_err = |reason: String| GsError::PlyHeader {
        path: path.to_path_buf(),
        reason,
    };
    let io_err = |source| GsError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut r = BufReader::new(File::open(path).map_err(io_err)?);
    let mut line = String::new();
    let mut next_line = |r: &mut BufReader<File>| -> Result<String> {
        line.clear();
        let n = r.read_line(&mut line).map_err(io_err)?;
        if n == 0 {
            return Err(header_err("unexpected end of file in header".into()));
        }
        Ok(line.trim_end_matches(['\n', '\r']).to_string())
    };

    if next_line(&mut r)? != "ply" {
        return Err(header_err("missing `ply` magic".into()));
    }
    let mut format = None;
    let mut comments = Vec::new();
    let mut vertex_count = None;
    let mut props: Vec<(String, Scalar)> = Vec::new();
    let mut in_vertex = false;
    let mut seen_element = false;
    loop {
        let l = next_line(&mut r)?;
        let mut parts = l.split_whitespace();
        match parts.next() {
            Some("format") => {
                format = Some(match (parts.next(), parts.next()) {
                    (Some("ascii"), Some("1.0")) => Format::Ascii,
                    (Some("binary_little_endian"), Some("1.0")) => Format::BinaryLe,
                    (Some("binary_big_endian"), Some("1.0")) => Format::BinaryBe,
                    _ => return Err(header_err(format!("unsupported format line `{l}`"))),
                })
            }
            Some("comment") | Some("obj_info") => comments.push(parts.collect::<Vec<_>>().join(" ")),
            Some("element") => {
                let name = parts.next().ok_or_else(|| header_err(format!("bad element line `{l}`")))?;
                let count: usize = parts
                    .next()
                    .and_then(|c| c.parse().ok())
                    .ok_or_else(|| header_err(format!("bad element count in `{l}`")))?;
                if name == "vertex" {
                    if seen_element {
                        return Err(header_err("the vertex element must come first".into()));
                    }
                    vertex_count = Some(count);
                    in_vertex = true;
                } else {
                    in_vertex = false;
                }
                seen_element = true;
            }
            Some("property") => {
                if !in_vertex {
                    continue;
                }
                let ty = parts.next().ok_or_else(|| header_err(format!("bad property line `{l}`")))?;
                if ty == "list" {
                    return Err(header_err("list properties on vertices are not supported".into()));
                }
                let ty = Scalar::parse(ty).ok_or_else(|| header_err(format!("unknown property type `{ty}`")))?;
                let name = parts.next().ok_or_else(|| header_err(format!("bad property line `{l}`")))?;
                props.push((name.to_string(), ty));
            }
            Some("end_header") => break,
            Some(other) => return Err(header_err(format!("unexpected header keyword `{other}`"))),
            None => {}
        }
    }
    let format = format.ok_or_else(|| header_err("missing format line".into()))?;
    let count = vertex_count.ok_or_else(|| header_err("no vertex element".into()))?;

    let truncated = || GsError::PropertyMismatch {
        path: path.to_path_buf(),
        reason: format!("vertex data ends before {count} vertices"),
    };
    let mut rows = Vec::with_capacity(count);
    match format {
        Format::Ascii => {
            let mut text = String::new();
            r.read_to_string(&mut text).map_err(io_err)?;
            let mut lines = text.lines().filter(|l| !l.trim().is_empty());
            for _ in 0..count {
                let l = lines.next().ok_or_else(truncated)?;
                let vals: Vec<f64> = l
                    .split_whitespace()
                    .map(|t| t.parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| GsError::PropertyMismatch {
                        path: path.to_path_buf(),
                        reason: format!("bad ascii value: {e}"),
                    })?;
                if vals.len() != props.len() {
                    return Err(GsError::PropertyMismatch {
                        path: path.to_path_buf(),
                        reason: format!("row has {} values, header declares {}", vals.len(), props.len()),
                    });
                }
                rows.push(vals);
            }
        }
        Format::BinaryLe | Format::BinaryBe => {
            let stride: usize = props.iter().map(|p| p.1.size()).sum();
            let mut buf = vec![0u8; stride];
            for _ in 0..count {
                r.read_exact(&mut buf).map_err(|_| truncated())?;
                let mut off = 0;
                let vals = props
                    .iter()
                    .map(|(_, ty)| {
                        let v = ty.decode(&buf[off..off + ty.size()], format == Format::BinaryBe);
                        off += ty.size();
                        v
                    })
                    .collect();
                rows.push(vals);
            }
        }
    }
    Ok(VertexTable {
        names: props.into_iter().map(|p| p.0).collect(),
        rows,
        comments,
    })
}

/// Reads a cloud written by [`save_ply`] or another tool using the same
/// layout. Extra vertex properties are ignored; `f_rest` may hold 0, 9, 24
/// or 45 values.
pub fn load_ply(path: &Path) -> Result<GaussianCloud> {
    let table = read_vertices(path)?;
    let mismatch = |reason: String| GsError::PropertyMismatch {
        path: path.to_path_buf(),
        reason,
    };
    let col = |name: &str| table.column(name).ok_or_else(|| mismatch(format!("missing property `{name}`")));
    let pos = [col("x")?, col("y")?, col("z")?];
    let dc = [col("f_dc_0")?, col("f_dc_1")?, col("f_dc_2")?];
    let opacity = col("opacity")?;
    let scale = [col("scale_0")?, col("scale_1")?, col("scale_2")?];
    let rot = [col("rot_0")?, col("rot_1")?, col("rot_2")?, col("rot_3")?];
    let mut rest = Vec::new();
    while let Some(c) = table.column(&format!("f_rest_{}", rest.len())) {
        rest.push(c);
    }
    let file_degree = match rest.len() {
        0 => 0,
        9 => 1,
        24 => 2,
        45 => 3,
        n => return Err(mismatch(format!("{n} f_rest properties do not match any SH degree"))),
    };
    let per_channel = rest.len() / 3;
    let degree = match table.comments.iter().find_map(|c| c.strip_prefix(DEGREE_COMMENT)) {
        Some(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|d| *d <= SH_MAX_DEGREE)
            .ok_or_else(|| mismatch(format!("bad {DEGREE_COMMENT} comment `{v}`")))?,
        None => file_degree,
    };

    let f = |v: f64| v as f32;
    let gaussians = table
        .rows
        .iter()
        .map(|row| {
            let mut sh = [[0.0f32; 3]; SH_COEFFS];
            sh[0] = dc.map(|c| f(row[c]));
            for ch in 0..3 {
                for k in 1..=per_channel {
                    sh[k][ch] = f(row[rest[ch * per_channel + k - 1]]);
                }
            }
            Gaussian3D {
                position: pos.map(|c| f(row[c])),
                rotation: rot.map(|c| f(row[c])),
                log_scale: scale.map(|c| f(row[c])),
                opacity_logit: f(row[opacity]),
                sh,
            }
        })
        .collect();
    Ok(GaussianCloud::new(gaussians, degree))
}

/// A point from a sparse reconstruction, optionally colored.
#[derive(Clone, Debug, PartialEq)]
pub struct SparsePoint {
    pub position: [f64; 3],
    pub rgb: Option<[f64; 3]>,
}

/// Reads `x, y, z` and, when present, 8-bit `red, green, blue`.
pub fn load_sparse_points(path: &Path) -> Result<Vec<SparsePoint>> {
    let table = read_vertices(path)?;
    let cols: HashMap<&str, usize> = ["x", "y", "z", "red", "green", "blue"]
        .into_iter()
        .filter_map(|n| table.column(n).map(|c| (n, c)))
        .collect();
    let (Some(&x), Some(&y), Some(&z)) = (cols.get("x"), cols.get("y"), cols.get("z")) else {
        return Err(GsError::PropertyMismatch {
            path: path.to_path_buf(),
            reason: "sparse points need x, y and z".into(),
        });
    };
    let color = match (cols.get("red"), cols.get("green"), cols.get("blue")) {
        (Some(&r), Some(&g), Some(&b)) => Some([r, g, b]),
        _ => None,
    };
    Ok(table
        .rows
        .iter()
        .map(|row| SparsePoint {
            position: [row[x], row[y], row[z]],
            rgb: color.map(|c| c.map(|i| row[i] / 255.0)),
        })
        .collect())
}
