//! Mesh file formats.
//!
//! The native format is a sectioned text file:
//!
//! ```text
//! mitwin-mesh 1
//! nodes <N>          x y z               (mm, one node per line)
//! tets <M>           a b c d             (zero-based node indices)
//! frames <M>         f0 f1 f2 s0 s1 s2 n0 n1 n2
//! cobiveco <N>       tm ab rt tv
//! surface_tags <N>   none | lv_endo | rv_endo | epi
//! ```
//!
//! Blank lines and lines starting with `#` are ignored. Legacy VTK ASCII unstructured
//! grids are also read, with `tm`, `ab`, `rt`, `tv` (and optionally `surface_tag`) as
//! point data and `fiber`, `sheet`, `normal` vectors as cell data.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::Vector3;

use super::{Frame, Mesh, Point, SurfaceTag};
use crate::cobiveco::CobivecoCoord;
use crate::error::{Error, Result};

const MAGIC: &str = "mitwin-mesh 1";

pub fn save_mesh(mesh: &Mesh, path: impl AsRef<Path>) -> Result<()> {
    save_mesh_with_comment(mesh, path, "")
}

/// Like [`save_mesh`], with `comment` written as leading `#` lines.
pub fn save_mesh_with_comment(mesh: &Mesh, path: impl AsRef<Path>, comment: &str) -> Result<()> {
    let mut s = String::new();
    for line in comment.lines() {
        let _ = writeln!(s, "# {line}");
    }
    s.push_str(&mesh_to_string(mesh));
    fs::write(path, s)?;
    Ok(())
}

fn mesh_to_string(mesh: &Mesh) -> String {
    let mut s = String::with_capacity(mesh.num_nodes() * 120 + mesh.num_tets() * 200);
    let _ = writeln!(s, "{MAGIC}");
    let _ = writeln!(s, "nodes {}", mesh.num_nodes());
    for p in mesh.nodes() {
        let _ = writeln!(s, "{:?} {:?} {:?}", p.x, p.y, p.z);
    }
    let _ = writeln!(s, "tets {}", mesh.num_tets());
    for t in mesh.tets() {
        let _ = writeln!(s, "{} {} {} {}", t[0], t[1], t[2], t[3]);
    }
    let _ = writeln!(s, "frames {}", mesh.num_tets());
    for f in mesh.frames() {
        let v: Vec<String> = f
            .fiber
            .iter()
            .chain(f.sheet.iter())
            .chain(f.normal.iter())
            .map(|x| format!("{x:?}"))
            .collect();
        let _ = writeln!(s, "{}", v.join(" "));
    }
    let _ = writeln!(s, "cobiveco {}", mesh.num_nodes());
    for c in mesh.cobiveco() {
        let _ = writeln!(s, "{:?} {:?} {:?} {}", c.tm, c.ab, c.rt, c.tv);
    }
    let _ = writeln!(s, "surface_tags {}", mesh.num_nodes());
    for t in mesh.surface_tags() {
        let _ = writeln!(s, "{}", t.as_str());
    }
    s
}

/// Loads a mesh, dispatching on the first line (`mitwin-mesh` or `# vtk`). The result
/// is fully validated.
pub fn load_mesh(path: impl AsRef<Path>) -> Result<Mesh> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let first = text.lines().next().unwrap_or("").trim();
    if first.starts_with("# vtk") {
        parse_vtk(path, &text)
    } else {
        parse_native(path, &text)
    }
}

fn parse_num<T: std::str::FromStr>(path: &Path, line: usize, tok: &str) -> Result<T> {
    tok.parse()
        .map_err(|_| Error::format(path, line, format!("cannot parse '{tok}'")))
}

fn parse_native(path: &Path, text: &str) -> Result<Mesh> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
        .peekable();
    match lines.next() {
        Some((_, l)) if l == MAGIC => {}
        Some((n, l)) => return Err(Error::format(path, n, format!("expected '{MAGIC}', found '{l}'"))),
        None => return Err(Error::format(path, 0, "empty file")),
    }

    let mut nodes = None;
    let mut tets = None;
    let mut frames = None;
    let mut cobiveco = None;
    let mut tags = None;
    while let Some((ln, header)) = lines.next() {
        let mut it = header.split_whitespace();
        let name = it.next().unwrap_or("");
        let count: usize = match it.next() {
            Some(tok) => parse_num(path, ln, tok)?,
            None => return Err(Error::format(path, ln, format!("section '{name}' has no count"))),
        };
        let mut rows = Vec::with_capacity(count);
        for _ in 0..count {
            match lines.next() {
                Some((n, l)) => rows.push((n, l)),
                None => return Err(Error::format(path, ln, format!("section '{name}' truncated"))),
            }
        }
        let fields = |expected: usize| -> Result<Vec<(usize, Vec<&str>)>> {
            rows.iter()
                .map(|(n, l)| {
                    let toks: Vec<&str> = l.split_whitespace().collect();
                    if toks.len() != expected {
                        Err(Error::format(
                            path,
                            *n,
                            format!("section '{name}' expects {expected} values per line, found {}", toks.len()),
                        ))
                    } else {
                        Ok((*n, toks))
                    }
                })
                .collect()
        };
        match name {
            "nodes" => {
                let mut v = Vec::with_capacity(count);
                for (n, t) in fields(3)? {
                    v.push(Point::new(parse_num(path, n, t[0])?, parse_num(path, n, t[1])?, parse_num(path, n, t[2])?));
                }
                nodes = Some(v);
            }
            "tets" => {
                let mut v = Vec::with_capacity(count);
                for (n, t) in fields(4)? {
                    v.push([
                        parse_num(path, n, t[0])?,
                        parse_num(path, n, t[1])?,
                        parse_num(path, n, t[2])?,
                        parse_num(path, n, t[3])?,
                    ]);
                }
                tets = Some(v);
            }
            "frames" => {
                let mut v = Vec::with_capacity(count);
                for (n, t) in fields(9)? {
                    let mut x = [0.0; 9];
                    for k in 0..9 {
                        x[k] = parse_num(path, n, t[k])?;
                    }
                    v.push(Frame {
                        fiber: Vector3::new(x[0], x[1], x[2]),
                        sheet: Vector3::new(x[3], x[4], x[5]),
                        normal: Vector3::new(x[6], x[7], x[8]),
                    });
                }
                frames = Some(v);
            }
            "cobiveco" => {
                let mut v = Vec::with_capacity(count);
                for (n, t) in fields(4)? {
                    v.push(CobivecoCoord::new(
                        parse_num(path, n, t[0])?,
                        parse_num(path, n, t[1])?,
                        parse_num(path, n, t[2])?,
                        parse_num(path, n, t[3])?,
                    ));
                }
                cobiveco = Some(v);
            }
            "surface_tags" => {
                let mut v = Vec::with_capacity(count);
                for (n, t) in fields(1)? {
                    v.push(
                        t[0].parse::<SurfaceTag>()
                            .map_err(|_| Error::format(path, n, format!("unknown surface tag '{}'", t[0])))?,
                    );
                }
                tags = Some(v);
            }
            other => return Err(Error::format(path, ln, format!("unknown section '{other}'"))),
        }
    }
    let missing = |what: &str| Error::format(path, 0, format!("missing '{what}' section"));
    let nodes = nodes.ok_or_else(|| missing("nodes"))?;
    let tets = tets.ok_or_else(|| missing("tets"))?;
    let frames = frames.ok_or_else(|| missing("frames"))?;
    let cobiveco = cobiveco.ok_or_else(|| missing("cobiveco"))?;
    let tags = tags.ok_or_else(|| missing("surface_tags"))?;
    Mesh::new(nodes, tets, frames, cobiveco, tags)
}

/// Whitespace tokens with their line numbers.
struct Tokens<'a> {
    path: &'a Path,
    toks: Vec<(usize, &'a str)>,
    pos: usize,
}

impl<'a> Tokens<'a> {
    fn next(&mut self) -> Result<(usize, &'a str)> {
        let t = self
            .toks
            .get(self.pos)
            .copied()
            .ok_or_else(|| Error::format(self.path, self.toks.last().map_or(0, |t| t.0), "unexpected end of file"))?;
        self.pos += 1;
        Ok(t)
    }

    fn num<T: std::str::FromStr>(&mut self) -> Result<T> {
        let (ln, t) = self.next()?;
        parse_num(self.path, ln, t)
    }

    fn peek(&self) -> Option<&'a str> {
        self.toks.get(self.pos).map(|t| t.1)
    }

    fn floats(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.num()).collect()
    }
}

#[derive(Default)]
struct VtkArrays {
    scalars: Vec<(String, Vec<f64>, usize)>,
}

fn read_data_block(tk: &mut Tokens<'_>, n: usize, out: &mut VtkArrays) -> Result<()> {
    while let Some(kw) = tk.peek() {
        match kw.to_ascii_uppercase().as_str() {
            "SCALARS" => {
                tk.next()?;
                let (_, name) = tk.next()?;
                let _ty = tk.next()?;
                let mut ncomp = 1;
                if tk.peek().is_some_and(|t| t.chars().all(|c| c.is_ascii_digit())) {
                    ncomp = tk.num()?;
                }
                if tk.peek().is_some_and(|t| t.eq_ignore_ascii_case("LOOKUP_TABLE")) {
                    tk.next()?;
                    tk.next()?;
                }
                let v = tk.floats(n * ncomp)?;
                out.scalars.push((name.to_string(), v, ncomp));
            }
            "VECTORS" | "NORMALS" => {
                tk.next()?;
                let (_, name) = tk.next()?;
                let _ty = tk.next()?;
                let v = tk.floats(n * 3)?;
                out.scalars.push((name.to_string(), v, 3));
            }
            "FIELD" => {
                tk.next()?;
                let _name = tk.next()?;
                let count: usize = tk.num()?;
                for _ in 0..count {
                    let (_, name) = tk.next()?;
                    let ncomp: usize = tk.num()?;
                    let ntup: usize = tk.num()?;
                    let _ty = tk.next()?;
                    let v = tk.floats(ncomp * ntup)?;
                    out.scalars.push((name.to_string(), v, ncomp));
                }
            }
            _ => break,
        }
    }
    Ok(())
}

fn parse_vtk(path: &Path, text: &str) -> Result<Mesh> {
    let mut lines = text.lines().enumerate();
    let _version = lines.next();
    let _title = lines.next();
    match lines.next() {
        Some((_, l)) if l.trim().eq_ignore_ascii_case("ASCII") => {}
        Some((n, l)) => return Err(Error::format(path, n + 1, format!("only ASCII VTK is supported, found '{}'", l.trim()))),
        None => return Err(Error::format(path, 3, "truncated VTK header")),
    }
    let toks: Vec<(usize, &str)> = lines
        .flat_map(|(i, l)| l.split_whitespace().map(move |t| (i + 1, t)))
        .collect();
    let mut tk = Tokens { path, toks, pos: 0 };

    let mut points: Option<Vec<Point>> = None;
    let mut cells: Option<Vec<Vec<usize>>> = None;
    let mut types: Option<Vec<u8>> = None;
    let mut point_data = VtkArrays::default();
    let mut cell_data = VtkArrays::default();
    while let Some(kw) = tk.peek() {
        let (ln, kw_tok) = tk.next()?;
        match kw.to_ascii_uppercase().as_str() {
            "DATASET" => {
                let (l, ty) = tk.next()?;
                if !ty.eq_ignore_ascii_case("UNSTRUCTURED_GRID") {
                    return Err(Error::format(path, l, format!("unsupported dataset '{ty}'")));
                }
            }
            "POINTS" => {
                let n: usize = tk.num()?;
                let _ty = tk.next()?;
                let v = tk.floats(3 * n)?;
                points = Some(v.chunks(3).map(|c| Point::new(c[0], c[1], c[2])).collect());
            }
            "CELLS" => {
                let n: usize = tk.num()?;
                let size: usize = tk.num()?;
                if tk.peek().is_some_and(|t| t.eq_ignore_ascii_case("OFFSETS")) {
                    // VTK 5.x layout: offsets then connectivity
                    tk.next()?;
                    tk.next()?;
                    let offsets: Vec<usize> = (0..n).map(|_| tk.num()).collect::<Result<_>>()?;
                    let (l, kw) = tk.next()?;
                    if !kw.eq_ignore_ascii_case("CONNECTIVITY") {
                        return Err(Error::format(path, l, "expected CONNECTIVITY"));
                    }
                    tk.next()?;
                    let conn: Vec<usize> = (0..size).map(|_| tk.num()).collect::<Result<_>>()?;
                    cells = Some(offsets.windows(2).map(|w| conn[w[0]..w[1]].to_vec()).collect());
                } else {
                    let mut v = Vec::with_capacity(n);
                    for _ in 0..n {
                        let k: usize = tk.num()?;
                        v.push((0..k).map(|_| tk.num()).collect::<Result<Vec<usize>>>()?);
                    }
                    cells = Some(v);
                }
            }
            "CELL_TYPES" => {
                let n: usize = tk.num()?;
                types = Some((0..n).map(|_| tk.num()).collect::<Result<_>>()?);
            }
            "POINT_DATA" => {
                let n: usize = tk.num()?;
                read_data_block(&mut tk, n, &mut point_data)?;
            }
            "CELL_DATA" => {
                let n: usize = tk.num()?;
                read_data_block(&mut tk, n, &mut cell_data)?;
            }
            _ => return Err(Error::format(path, ln, format!("unexpected keyword '{kw_tok}'"))),
        }
    }
    let points = points.ok_or_else(|| Error::format(path, 0, "missing POINTS"))?;
    let cells = cells.ok_or_else(|| Error::format(path, 0, "missing CELLS"))?;
    let n = points.len();
    let mut tets = Vec::with_capacity(cells.len());
    for (i, c) in cells.iter().enumerate() {
        let is_tet = types.as_ref().map_or(true, |t| t.get(i) == Some(&10));
        if c.len() != 4 || !is_tet {
            return Err(Error::format(path, 0, format!("cell {i} is not a 4-node tetrahedron")));
        }
        tets.push([c[0], c[1], c[2], c[3]]);
    }
    let find = |arrays: &VtkArrays, name: &str, ncomp: usize, count: usize| -> Option<Vec<f64>> {
        arrays
            .scalars
            .iter()
            .find(|(n, v, k)| n == name && *k == ncomp && v.len() == count * ncomp)
            .map(|(_, v, _)| v.clone())
    };
    let cob = match (
        find(&point_data, "tm", 1, n),
        find(&point_data, "ab", 1, n),
        find(&point_data, "rt", 1, n),
        find(&point_data, "tv", 1, n),
    ) {
        (Some(tm), Some(ab), Some(rt), Some(tv)) => (0..n)
            .map(|i| CobivecoCoord::new(tm[i], ab[i], rt[i], tv[i].round().clamp(0.0, 255.0) as u8))
            .collect(),
        _ => match find(&point_data, "cobiveco", 4, n) {
            Some(v) => v
                .chunks(4)
                .map(|c| CobivecoCoord::new(c[0], c[1], c[2], c[3].round().clamp(0.0, 255.0) as u8))
                .collect(),
            None => return Err(Error::format(path, 0, "missing cobiveco point data (tm, ab, rt, tv)")),
        },
    };
    let m = tets.len();
    let frames = match (
        find(&cell_data, "fiber", 3, m),
        find(&cell_data, "sheet", 3, m),
        find(&cell_data, "normal", 3, m),
    ) {
        (Some(f), Some(s), Some(nn)) => (0..m)
            .map(|i| Frame {
                fiber: Vector3::new(f[3 * i], f[3 * i + 1], f[3 * i + 2]),
                sheet: Vector3::new(s[3 * i], s[3 * i + 1], s[3 * i + 2]),
                normal: Vector3::new(nn[3 * i], nn[3 * i + 1], nn[3 * i + 2]),
            })
            .collect(),
        _ => return Err(Error::format(path, 0, "missing fiber/sheet/normal cell data")),
    };
    let tags = match find(&point_data, "surface_tag", 1, n) {
        Some(v) => v
            .iter()
            .enumerate()
            .map(|(i, x)| {
                SurfaceTag::from_code(x.round() as u8)
                    .ok_or_else(|| Error::format(path, 0, format!("bad surface_tag code {x} at point {i}")))
            })
            .collect::<Result<Vec<_>>>()?,
        None => vec![SurfaceTag::None; n],
    };
    Mesh::new(points, tets, frames, cob, tags)
}

/// Writes a legacy ASCII VTK unstructured grid with the Cobiveco coordinates, surface
/// tags and fiber frames, plus any extra per-node scalar fields.
pub fn write_vtk(mesh: &Mesh, path: impl AsRef<Path>, extra: &[(&str, &[f64])]) -> Result<()> {
    let n = mesh.num_nodes();
    let m = mesh.num_tets();
    let mut s = String::new();
    let _ = writeln!(s, "# vtk DataFile Version 3.0\nmitwin mesh\nASCII\nDATASET UNSTRUCTURED_GRID");
    let _ = writeln!(s, "POINTS {n} double");
    for p in mesh.nodes() {
        let _ = writeln!(s, "{:?} {:?} {:?}", p.x, p.y, p.z);
    }
    let _ = writeln!(s, "CELLS {m} {}", m * 5);
    for t in mesh.tets() {
        let _ = writeln!(s, "4 {} {} {} {}", t[0], t[1], t[2], t[3]);
    }
    let _ = writeln!(s, "CELL_TYPES {m}");
    for _ in 0..m {
        let _ = writeln!(s, "10");
    }
    let _ = writeln!(s, "POINT_DATA {n}");
    let scalar = |s: &mut String, name: &str, vals: &mut dyn Iterator<Item = f64>| {
        let _ = writeln!(s, "SCALARS {name} double 1\nLOOKUP_TABLE default");
        for v in vals {
            let _ = writeln!(s, "{v:?}");
        }
    };
    let c = mesh.cobiveco();
    scalar(&mut s, "tm", &mut c.iter().map(|c| c.tm));
    scalar(&mut s, "ab", &mut c.iter().map(|c| c.ab));
    scalar(&mut s, "rt", &mut c.iter().map(|c| c.rt));
    scalar(&mut s, "tv", &mut c.iter().map(|c| c.tv as f64));
    scalar(&mut s, "surface_tag", &mut mesh.surface_tags().iter().map(|t| t.code() as f64));
    for (name, vals) in extra {
        if vals.len() != n {
            return Err(Error::LengthMismatch {
                what: "extra VTK point field",
                expected: n,
                got: vals.len(),
            });
        }
        scalar(&mut s, name, &mut vals.iter().copied());
    }
    let _ = writeln!(s, "CELL_DATA {m}");
    for (name, pick) in [
        ("fiber", (|f: &Frame| f.fiber) as fn(&Frame) -> Vector3<f64>),
        ("sheet", |f: &Frame| f.sheet),
        ("normal", |f: &Frame| f.normal),
    ] {
        let _ = writeln!(s, "VECTORS {name} double");
        for f in mesh.frames() {
            let v = pick(f);
            let _ = writeln!(s, "{:?} {:?} {:?}", v.x, v.y, v.z);
        }
    }
    fs::write(path, s)?;
    Ok(())
}
