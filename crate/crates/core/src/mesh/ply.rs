use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use nalgebra::Vector3;

use super::{MeshError, TriMesh};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlyFormat {
    Ascii,
    BinaryLittleEndian,
}

/// Writes positions and faces; vertices as float32, faces as `uchar`/`int` lists.
pub fn write_ply<W: Write>(mesh: &TriMesh, format: PlyFormat, w: &mut W) -> Result<(), MeshError> {
    let fmt = match format {
        PlyFormat::Ascii => "ascii",
        PlyFormat::BinaryLittleEndian => "binary_little_endian",
    };
    let mut out = Vec::new();
    write!(
        out,
        "ply\nformat {fmt} 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\n\
         element face {}\nproperty list uchar int vertex_indices\nend_header\n",
        mesh.vertices.len(),
        mesh.triangles.len()
    )?;
    match format {
        PlyFormat::Ascii => {
            for v in &mesh.vertices {
                writeln!(out, "{} {} {}", v.x as f32, v.y as f32, v.z as f32)?;
            }
            for t in &mesh.triangles {
                writeln!(out, "3 {} {} {}", t[0], t[1], t[2])?;
            }
        }
        PlyFormat::BinaryLittleEndian => {
            for v in &mesh.vertices {
                for c in [v.x, v.y, v.z] {
                    out.extend_from_slice(&(c as f32).to_le_bytes());
                }
            }
            for t in &mesh.triangles {
                out.push(3u8);
                for i in t {
                    out.extend_from_slice(&(*i as i32).to_le_bytes());
                }
            }
        }
    }
    w.write_all(&out)?;
    Ok(())
}

pub fn write_obj<W: Write>(mesh: &TriMesh, w: &mut W) -> Result<(), MeshError> {
    let mut out = String::new();
    for v in &mesh.vertices {
        out.push_str(&format!("v {} {} {}\n", v.x as f32, v.y as f32, v.z as f32));
    }
    for t in &mesh.triangles {
        out.push_str(&format!("f {} {} {}\n", t[0] + 1, t[1] + 1, t[2] + 1));
    }
    w.write_all(out.as_bytes())?;
    Ok(())
}

#[derive(Clone, Copy, Debug)]
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
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            _ => return None,
        })
    }

    fn read_le<R: Read>(self, r: &mut R) -> std::io::Result<f64> {
        let mut b = [0u8; 8];
        Ok(match self {
            Scalar::I8 => {
                r.read_exact(&mut b[..1])?;
                b[0] as i8 as f64
            }
            Scalar::U8 => {
                r.read_exact(&mut b[..1])?;
                b[0] as f64
            }
            Scalar::I16 => {
                r.read_exact(&mut b[..2])?;
                i16::from_le_bytes([b[0], b[1]]) as f64
            }
            Scalar::U16 => {
                r.read_exact(&mut b[..2])?;
                u16::from_le_bytes([b[0], b[1]]) as f64
            }
            Scalar::I32 => {
                r.read_exact(&mut b[..4])?;
                i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64
            }
            Scalar::U32 => {
                r.read_exact(&mut b[..4])?;
                u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64
            }
            Scalar::F32 => {
                r.read_exact(&mut b[..4])?;
                f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64
            }
            Scalar::F64 => {
                r.read_exact(&mut b)?;
                f64::from_le_bytes(b)
            }
        })
    }
}

#[derive(Debug)]
enum Property {
    Scalar(String, Scalar),
    List(String, Scalar, Scalar),
}

#[derive(Debug)]
struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
}

/// Reads vertex positions and polygon faces (fan-triangulated) from ASCII or
/// binary little-endian PLY. Other elements and properties are skipped.
pub fn read_ply(path: &Path) -> Result<TriMesh, MeshError> {
    let file = std::fs::File::open(path)?;
    read_ply_from(&mut BufReader::new(file))
}

pub(crate) fn read_ply_from<R: BufRead>(r: &mut R) -> Result<TriMesh, MeshError> {
    let bad = |s: String| MeshError::Ply(s);
    let mut line = String::new();
    r.read_line(&mut line)?;
    if line.trim() != "ply" {
        return Err(bad("missing 'ply' magic".into()));
    }
    let mut binary = false;
    let mut elements: Vec<Element> = Vec::new();
    loop {
        line.clear();
        if r.read_line(&mut line)? == 0 {
            return Err(bad("unterminated header".into()));
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            ["format", "ascii", _] => binary = false,
            ["format", "binary_little_endian", _] => binary = true,
            ["format", other, _] => return Err(bad(format!("unsupported format {other}"))),
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count.parse().map_err(|_| bad(format!("bad count {count}")))?,
                props: Vec::new(),
            }),
            ["property", "list", ct, it, name] => {
                let el = elements.last_mut().ok_or_else(|| bad("property before element".into()))?;
                let ct = Scalar::parse(ct).ok_or_else(|| bad(format!("bad type {ct}")))?;
                let it = Scalar::parse(it).ok_or_else(|| bad(format!("bad type {it}")))?;
                el.props.push(Property::List(name.to_string(), ct, it));
            }
            ["property", ty, name] => {
                let el = elements.last_mut().ok_or_else(|| bad("property before element".into()))?;
                let ty = Scalar::parse(ty).ok_or_else(|| bad(format!("bad type {ty}")))?;
                el.props.push(Property::Scalar(name.to_string(), ty));
            }
            ["end_header"] => break,
            _ => {}
        }
    }

    let mut mesh = TriMesh::new();
    let mut ascii_tokens: Vec<String> = Vec::new();
    let mut tok_pos = 0usize;
    if !binary {
        let mut rest = String::new();
        r.read_to_string(&mut rest)?;
        ascii_tokens = rest.split_whitespace().map(str::to_string).collect();
    }
    let next_ascii = |tok_pos: &mut usize| -> Result<f64, MeshError> {
        let t = ascii_tokens
            .get(*tok_pos)
            .ok_or_else(|| MeshError::Ply("unexpected end of data".into()))?;
        *tok_pos += 1;
        t.parse::<f64>().map_err(|_| MeshError::Ply(format!("bad value {t}")))
    };

    for el in &elements {
        for _ in 0..el.count {
            let mut pos = [0.0f64; 3];
            let mut face: Vec<u32> = Vec::new();
            for p in &el.props {
                match p {
                    Property::Scalar(name, ty) => {
                        let v = if binary { ty.read_le(r)? } else { next_ascii(&mut tok_pos)? };
                        match name.as_str() {
                            "x" => pos[0] = v,
                            "y" => pos[1] = v,
                            "z" => pos[2] = v,
                            _ => {}
                        }
                    }
                    Property::List(name, ct, it) => {
                        let n = if binary { ct.read_le(r)? } else { next_ascii(&mut tok_pos)? } as usize;
                        for _ in 0..n {
                            let v = if binary { it.read_le(r)? } else { next_ascii(&mut tok_pos)? };
                            if name == "vertex_indices" || name == "vertex_index" {
                                face.push(v as u32);
                            }
                        }
                    }
                }
            }
            match el.name.as_str() {
                "vertex" => mesh.vertices.push(Vector3::new(pos[0], pos[1], pos[2])),
                "face" if face.len() >= 3 => {
                    for k in 1..face.len() - 1 {
                        mesh.triangles.push([face[0], face[k], face[k + 1]]);
                    }
                }
                _ => {}
            }
        }
    }
    let n = mesh.vertices.len() as u32;
    if mesh.triangles.iter().flatten().any(|&i| i >= n) {
        return Err(bad("face index out of range".into()));
    }
    Ok(mesh)
}
