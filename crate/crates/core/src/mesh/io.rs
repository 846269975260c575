//! Line-oriented ASCII mesh format.
//!
//! ```text
//! pzmesh 1
//! vertices N
//! x y z            (N lines)
//! cells M order k
//! i0 i1 ...        (M lines, 4 or 10 indices)
//! vtag
//! ELASTIC PIEZO .. (M names on one line)
//! stag NAME K
//! a b c            (K lines, outward-oriented corner triples)
//! ptag NAME i
//! ```
//!
//! Indices are 0-based. Coordinates are written with shortest round-trip
//! formatting so reloading reproduces them bit for bit.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::{PointTag, Region, SurfaceTag, TaggedMesh};
use crate::error::{Error, Result};
use crate::io::write_atomic;

pub fn save_mesh(mesh: &TaggedMesh, path: impl AsRef<Path>) -> Result<()> {
    let mut s = String::new();
    s.push_str("pzmesh 1\n");
    let _ = writeln!(s, "vertices {}", mesh.n_vertices());
    for v in mesh.vertices() {
        let _ = writeln!(s, "{:?} {:?} {:?}", v[0], v[1], v[2]);
    }
    let _ = writeln!(s, "cells {} order {}", mesh.n_cells(), mesh.order());
    for i in 0..mesh.n_cells() {
        let line: Vec<String> = mesh.cell(i).iter().map(usize::to_string).collect();
        s.push_str(&line.join(" "));
        s.push('\n');
    }
    s.push_str("vtag\n");
    let names: Vec<&str> = mesh.regions().iter().map(|r| r.name()).collect();
    s.push_str(&names.join(" "));
    s.push('\n');
    for (tag, facets) in mesh.raw_surfaces() {
        let _ = writeln!(s, "stag {} {}", tag.name(), facets.len());
        for f in facets {
            let _ = writeln!(s, "{} {} {}", f[0], f[1], f[2]);
        }
    }
    for (tag, v) in mesh.points() {
        let _ = writeln!(s, "ptag {} {}", tag.name(), v);
    }
    write_atomic(path.as_ref(), s.as_bytes())
}

struct Lines<'a> {
    path: &'a Path,
    iter: std::iter::Peekable<std::iter::Enumerate<std::str::Lines<'a>>>,
    line: usize,
}

impl<'a> Lines<'a> {
    fn err(&self, message: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.to_path_buf(),
            line: self.line,
            message: message.into(),
        }
    }

    fn next(&mut self) -> Option<&'a str> {
        for (i, l) in self.iter.by_ref() {
            self.line = i + 1;
            let l = l.trim();
            if !l.is_empty() {
                return Some(l);
            }
        }
        None
    }

    fn expect(&mut self, what: &str) -> Result<&'a str> {
        self.next().ok_or_else(|| self.err(format!("unexpected end of file, expected {what}")))
    }

    fn numbers<T: std::str::FromStr>(&self, line: &str, n: usize) -> Result<Vec<T>> {
        let vals: Vec<T> = line
            .split_whitespace()
            .map(|t| t.parse::<T>().map_err(|_| self.err(format!("cannot parse `{t}`"))))
            .collect::<Result<_>>()?;
        if vals.len() != n {
            return Err(self.err(format!("expected {n} values, found {}", vals.len())));
        }
        Ok(vals)
    }

    fn keyword<'b>(&self, line: &'b str, key: &str) -> Result<Vec<&'b str>> {
        let mut parts = line.split_whitespace();
        if parts.next() != Some(key) {
            return Err(self.err(format!("expected `{key}`")));
        }
        Ok(parts.collect())
    }

    fn count(&self, tok: Option<&&str>) -> Result<usize> {
        tok.and_then(|t| t.parse().ok()).ok_or_else(|| self.err("missing or invalid count"))
    }
}

pub fn load_mesh(path: impl AsRef<Path>) -> Result<TaggedMesh> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut r = Lines {
        path,
        iter: text.lines().enumerate().peekable(),
        line: 0,
    };
    let header = r.expect("header")?;
    if header != "pzmesh 1" {
        return Err(r.err("missing `pzmesh 1` header"));
    }
    let l = r.expect("vertices")?;
    let parts = r.keyword(l, "vertices")?;
    let nv = r.count(parts.first())?;
    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let l = r.expect("vertex")?;
        let v: Vec<f64> = r.numbers(l, 3)?;
        vertices.push([v[0], v[1], v[2]]);
    }
    let l = r.expect("cells")?;
    let parts = r.keyword(l, "cells")?;
    let nc = r.count(parts.first())?;
    if parts.get(1) != Some(&"order") {
        return Err(r.err("expected `cells M order k`"));
    }
    let order: u8 = match parts.get(2).and_then(|t| t.parse().ok()) {
        Some(o @ (1 | 2)) => o,
        _ => return Err(r.err("order must be 1 or 2")),
    };
    let npc = if order == 1 { 4 } else { 10 };
    let mut cells = Vec::with_capacity(nc);
    for _ in 0..nc {
        let l = r.expect("cell")?;
        let c: Vec<usize> = r.numbers(l, npc)?;
        if let Some(&bad) = c.iter().find(|&&v| v >= nv) {
            return Err(r.err(format!("vertex index {bad} out of range")));
        }
        cells.push(c);
    }
    let l = r.expect("vtag")?;
    r.keyword(l, "vtag")?;
    let l = r.expect("region names")?;
    let regions: Vec<Region> = l
        .split_whitespace()
        .map(|t| t.parse::<Region>().map_err(|e| r.err(e)))
        .collect::<Result<_>>()?;
    if regions.len() != nc {
        return Err(r.err(format!("{} region names for {nc} cells", regions.len())));
    }
    let mut surfaces: BTreeMap<SurfaceTag, Vec<[usize; 3]>> = BTreeMap::new();
    let mut points = BTreeMap::new();
    while let Some(l) = r.next() {
        let mut parts = l.split_whitespace();
        match parts.next() {
            Some("stag") => {
                let tag: SurfaceTag = parts
                    .next()
                    .ok_or_else(|| r.err("missing surface name"))?
                    .parse()
                    .map_err(|e: String| r.err(e))?;
                let k = r.count(parts.next().as_ref())?;
                if surfaces.contains_key(&tag) {
                    return Err(r.err(format!("duplicate surface {tag}")));
                }
                if k == 0 && tag == SurfaceTag::GammaPQ {
                    return Err(r.err("electrode surface missing"));
                }
                let mut facets = Vec::with_capacity(k);
                for _ in 0..k {
                    let l = r.expect("facet")?;
                    let f: Vec<usize> = r.numbers(l, 3)?;
                    if let Some(&bad) = f.iter().find(|&&v| v >= nv) {
                        return Err(r.err(format!("vertex index {bad} out of range")));
                    }
                    facets.push([f[0], f[1], f[2]]);
                }
                surfaces.insert(tag, facets);
            }
            Some("ptag") => {
                let tag: PointTag = parts
                    .next()
                    .ok_or_else(|| r.err("missing point name"))?
                    .parse()
                    .map_err(|e: String| r.err(e))?;
                let v = r.count(parts.next().as_ref())?;
                if v >= nv {
                    return Err(r.err(format!("vertex index {v} out of range")));
                }
                points.insert(tag, v);
            }
            _ => return Err(r.err(format!("unexpected line `{l}`"))),
        }
    }
    TaggedMesh::new(vertices, order, cells, regions, surfaces, points)
}
