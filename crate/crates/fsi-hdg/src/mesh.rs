//! Conforming two-region triangle meshes.
//!
//! A mesh is immutable after construction: vertices, triangles with a region
//! tag (fluid or solid), and derived facets. Interface facets (one fluid and
//! one solid neighbor) are always derived from the triangle regions, never
//! read from files. All triangles are stored counterclockwise.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Region {
    Fluid,
    Solid,
}

impl Region {
    pub fn as_str(self) -> &'static str {
        match self {
            Region::Fluid => "fluid",
            Region::Solid => "solid",
        }
    }
}

/// Boundary labels. Fluid boundaries are the inflow, outflow, and rigid-wall
/// labels; the solid uses a single clamped label.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundaryLabel {
    Inlet,
    Outlet,
    FluidWall,
    SolidClamp,
}

impl BoundaryLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            BoundaryLabel::Inlet => "Inlet",
            BoundaryLabel::Outlet => "Outlet",
            BoundaryLabel::FluidWall => "GammaF-wall",
            BoundaryLabel::SolidClamp => "GammaS-clamp",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "Inlet" => Some(BoundaryLabel::Inlet),
            "Outlet" => Some(BoundaryLabel::Outlet),
            "GammaF-wall" => Some(BoundaryLabel::FluidWall),
            "GammaS-clamp" => Some(BoundaryLabel::SolidClamp),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FacetKind {
    /// Interior facet with two neighbors in the given region.
    Interior(Region),
    /// Facet shared by one fluid and one solid triangle.
    Interface,
    Boundary(BoundaryLabel),
}

impl FacetKind {
    pub fn is_fluid_side(self) -> bool {
        matches!(
            self,
            FacetKind::Interior(Region::Fluid)
                | FacetKind::Interface
                | FacetKind::Boundary(BoundaryLabel::Inlet)
                | FacetKind::Boundary(BoundaryLabel::Outlet)
                | FacetKind::Boundary(BoundaryLabel::FluidWall)
        )
    }

    pub fn is_solid_side(self) -> bool {
        matches!(
            self,
            FacetKind::Interior(Region::Solid)
                | FacetKind::Interface
                | FacetKind::Boundary(BoundaryLabel::SolidClamp)
        )
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Triangle {
    pub vertices: [usize; 3],
    pub region: Region,
}

/// One side of a facet: the adjacent element, which of its three local edges
/// lies on the facet, and whether the directed local edge (a -> b) agrees with
/// the facet's canonical direction (low vertex index -> high vertex index).
#[derive(Debug, Clone, Copy)]
pub struct FacetSide {
    pub element: usize,
    pub local_edge: usize,
    pub same_direction: bool,
}

#[derive(Debug, Clone)]
pub struct Facet {
    /// Canonical endpoints, vertices[0] < vertices[1].
    pub vertices: [usize; 2],
    pub kind: FacetKind,
    /// One or two adjacent elements; interface facets store the fluid side first.
    pub sides: Vec<FacetSide>,
}

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("split_x = {split_x} does not lie on a vertical grid line of the {n} x {n} grid")]
    SplitNotResolved { split_x: f64, n: usize },
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("topology error: {msg}")]
    Topology { msg: String },
    #[error("triangle {triangle} has non-positive signed area")]
    Orientation { triangle: usize },
    #[error("degenerate geometry: {msg}")]
    GeometryDegenerate { msg: String },
    #[error("mesh validation failed: {msg}")]
    Validation { msg: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone)]
pub struct Mesh {
    vertices: Vec<[f64; 2]>,
    triangles: Vec<Triangle>,
    facets: Vec<Facet>,
    /// triangle -> facet index of each of its three local edges.
    triangle_facets: Vec<[usize; 3]>,
    areas: Vec<f64>,
    diameters: Vec<f64>,
}

/// Vertex pairs of the three directed local edges of a triangle:
/// edge 0 = (v0, v1), edge 1 = (v1, v2), edge 2 = (v2, v0).
pub const LOCAL_EDGES: [(usize, usize); 3] = [(0, 1), (1, 2), (2, 0)];

impl Mesh {
    /// Assembles derived facet data from vertices and triangles plus boundary
    /// labels. `boundary`: canonical (lo, hi) vertex pair -> label.
    fn assemble(
        vertices: Vec<[f64; 2]>,
        triangles: Vec<Triangle>,
        boundary: &BTreeMap<(usize, usize), BoundaryLabel>,
    ) -> Result<Self, MeshError> {
        for (t, tri) in triangles.iter().enumerate() {
            for &v in &tri.vertices {
                if v >= vertices.len() {
                    return Err(MeshError::Topology {
                        msg: format!("triangle {t} references vertex {v} out of range"),
                    });
                }
            }
            if signed_area(&vertices, tri.vertices) <= 0.0 {
                return Err(MeshError::Orientation { triangle: t });
            }
        }

        let mut edge_map: BTreeMap<(usize, usize), Vec<FacetSide>> = BTreeMap::new();
        for (t, tri) in triangles.iter().enumerate() {
            for (le, (a, b)) in LOCAL_EDGES.iter().enumerate() {
                let (ga, gb) = (tri.vertices[*a], tri.vertices[*b]);
                let key = (ga.min(gb), ga.max(gb));
                edge_map.entry(key).or_default().push(FacetSide {
                    element: t,
                    local_edge: le,
                    same_direction: ga < gb,
                });
            }
        }

        let mut facets = Vec::with_capacity(edge_map.len());
        let mut facet_of_edge: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        for (key, mut sides) in edge_map {
            let kind = match sides.len() {
                1 => {
                    let label = boundary.get(&key).copied().ok_or(MeshError::Topology {
                        msg: format!(
                            "edge ({}, {}) lies on the boundary but carries no label",
                            key.0, key.1
                        ),
                    })?;
                    let region = triangles[sides[0].element].region;
                    let ok = match label {
                        BoundaryLabel::SolidClamp => region == Region::Solid,
                        _ => region == Region::Fluid,
                    };
                    if !ok {
                        return Err(MeshError::Topology {
                            msg: format!(
                                "boundary edge ({}, {}) labeled {} borders a {} triangle",
                                key.0,
                                key.1,
                                label.as_str(),
                                region.as_str()
                            ),
                        });
                    }
                    FacetKind::Boundary(label)
                }
                2 => {
                    if boundary.contains_key(&key) {
                        return Err(MeshError::Topology {
                            msg: format!(
                                "edge ({}, {}) is listed as boundary but has two neighbors",
                                key.0, key.1
                            ),
                        });
                    }
                    let r0 = triangles[sides[0].element].region;
                    let r1 = triangles[sides[1].element].region;
                    if r0 == r1 {
                        FacetKind::Interior(r0)
                    } else {
                        // Interface facets keep the fluid side first.
                        if r0 != Region::Fluid {
                            sides.swap(0, 1);
                        }
                        FacetKind::Interface
                    }
                }
                n => {
                    return Err(MeshError::Topology {
                        msg: format!("edge ({}, {}) has {} adjacent triangles", key.0, key.1, n),
                    })
                }
            };
            facet_of_edge.insert(key, facets.len());
            facets.push(Facet {
                vertices: [key.0, key.1],
                kind,
                sides,
            });
        }

        for key in boundary.keys() {
            if !facet_of_edge.contains_key(key) {
                return Err(MeshError::Topology {
                    msg: format!(
                        "boundary facet ({}, {}) is not an edge of any triangle",
                        key.0, key.1
                    ),
                });
            }
        }

        let mut triangle_facets = vec![[usize::MAX; 3]; triangles.len()];
        for (fi, facet) in facets.iter().enumerate() {
            for side in &facet.sides {
                triangle_facets[side.element][side.local_edge] = fi;
            }
        }

        let areas: Vec<f64> = triangles
            .iter()
            .map(|t| 0.5 * signed_area(&vertices, t.vertices))
            .collect();
        let diameters: Vec<f64> = triangles
            .iter()
            .map(|t| {
                LOCAL_EDGES
                    .iter()
                    .map(|&(a, b)| {
                        let pa = vertices[t.vertices[a]];
                        let pb = vertices[t.vertices[b]];
                        ((pa[0] - pb[0]).powi(2) + (pa[1] - pb[1]).powi(2)).sqrt()
                    })
                    .fold(0.0, f64::max)
            })
            .collect();

        let mesh = Self {
            vertices,
            triangles,
            facets,
            triangle_facets,
            areas,
            diameters,
        };
        mesh.validate()?;
        Ok(mesh)
    }

    /// Structured unit-square mesh: n x n cells, each split by the diagonal
    /// from its lower-left to its upper-right corner. Cells left of `split_x`
    /// are fluid and the rest solid; `split_x` must lie on a vertical grid
    /// line. The outer boundary carries the wall label on the fluid side and
    /// the clamped label on the solid side.
    pub fn build_structured_square(n_per_side: usize, split_x: f64) -> Result<Self, MeshError> {
        let n = n_per_side;
        assert!(n >= 1, "need at least one cell per side");
        let split_col = split_x * n as f64;
        if (split_col - split_col.round()).abs() > 1e-12 * n as f64
            || !(0.0..=1.0).contains(&split_x)
        {
            return Err(MeshError::SplitNotResolved { split_x, n });
        }
        let split_col = split_col.round() as usize;

        let vid = |i: usize, j: usize| j * (n + 1) + i;
        let mut vertices = Vec::with_capacity((n + 1) * (n + 1));
        for j in 0..=n {
            for i in 0..=n {
                vertices.push([i as f64 / n as f64, j as f64 / n as f64]);
            }
        }
        let mut triangles = Vec::with_capacity(2 * n * n);
        for j in 0..n {
            for i in 0..n {
                let region = if i < split_col {
                    Region::Fluid
                } else {
                    Region::Solid
                };
                let (a, b, c, d) = (vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1));
                triangles.push(Triangle {
                    vertices: [a, b, c],
                    region,
                });
                triangles.push(Triangle {
                    vertices: [a, c, d],
                    region,
                });
            }
        }

        let mut boundary = BTreeMap::new();
        let mut add = |v0: usize, v1: usize, fluid: bool| {
            let label = if fluid {
                BoundaryLabel::FluidWall
            } else {
                BoundaryLabel::SolidClamp
            };
            boundary.insert((v0.min(v1), v0.max(v1)), label);
        };
        for i in 0..n {
            add(vid(i, 0), vid(i + 1, 0), i < split_col);
            add(vid(i, n), vid(i + 1, n), i < split_col);
        }
        for j in 0..n {
            add(vid(0, j), vid(0, j + 1), 0 < split_col);
            add(vid(n, j), vid(n, j + 1), n <= split_col);
        }

        Self::assemble(vertices, triangles, &boundary)
    }

    /// Builds a mesh directly from raw arrays (used by generators and tests).
    pub fn from_raw(
        vertices: Vec<[f64; 2]>,
        triangles: Vec<Triangle>,
        boundary: &BTreeMap<(usize, usize), BoundaryLabel>,
    ) -> Result<Self, MeshError> {
        Self::assemble(vertices, triangles, boundary)
    }

    pub fn load_mesh_file(path: impl AsRef<Path>) -> Result<Self, MeshError> {
        let file = std::fs::File::open(path)?;
        Self::read_from(BufReader::new(file))
    }

    pub fn read_from(reader: impl BufRead) -> Result<Self, MeshError> {
        let mut lines = reader.lines().enumerate();
        let mut next_content = || -> Result<(usize, String), MeshError> {
            for (idx, line) in lines.by_ref() {
                let line = line?;
                let trimmed = line.trim();
                if !trimmed.is_empty() && !trimmed.starts_with('#') {
                    return Ok((idx + 1, trimmed.to_string()));
                }
            }
            Err(MeshError::Parse {
                line: 0,
                msg: "unexpected end of file".into(),
            })
        };

        let expect_count = |line: usize, text: &str, keyword: &str| -> Result<usize, MeshError> {
            let mut parts = text.split_whitespace();
            let head = parts.next().unwrap_or_default();
            if head != keyword {
                return Err(MeshError::Parse {
                    line,
                    msg: format!("expected '{keyword} <count>', found '{text}'"),
                });
            }
            parts
                .next()
                .and_then(|s| s.parse::<usize>().ok())
                .ok_or(MeshError::Parse {
                    line,
                    msg: format!("expected '{keyword} <count>', found '{text}'"),
                })
        };

        let (line, text) = next_content()?;
        let nv = expect_count(line, &text, "vertices")?;
        let mut vertices = Vec::with_capacity(nv);
        for _ in 0..nv {
            let (line, text) = next_content()?;
            let parts: Vec<&str> = text.split_whitespace().collect();
            if parts.len() != 2 {
                return Err(MeshError::Parse {
                    line,
                    msg: format!("expected 'x y', found '{text}'"),
                });
            }
            let x = parts[0].parse::<f64>().map_err(|e| MeshError::Parse {
                line,
                msg: format!("bad coordinate: {e}"),
            })?;
            let y = parts[1].parse::<f64>().map_err(|e| MeshError::Parse {
                line,
                msg: format!("bad coordinate: {e}"),
            })?;
            vertices.push([x, y]);
        }

        let (line, text) = next_content()?;
        let nt = expect_count(line, &text, "triangles")?;
        let mut triangles = Vec::with_capacity(nt);
        for _ in 0..nt {
            let (line, text) = next_content()?;
            let parts: Vec<&str> = text.split_whitespace().collect();
            if parts.len() != 4 {
                return Err(MeshError::Parse {
                    line,
                    msg: format!("expected 'i j k region', found '{text}'"),
                });
            }
            let mut v = [0usize; 3];
            for (slot, part) in v.iter_mut().zip(&parts[..3]) {
                *slot = part.parse().map_err(|e| MeshError::Parse {
                    line,
                    msg: format!("bad vertex index: {e}"),
                })?;
            }
            let region = match parts[3] {
                "fluid" => Region::Fluid,
                "solid" => Region::Solid,
                other => {
                    return Err(MeshError::Parse {
                        line,
                        msg: format!("unknown region '{other}' (expected fluid|solid)"),
                    })
                }
            };
            triangles.push(Triangle {
                vertices: v,
                region,
            });
        }

        let (line, text) = next_content()?;
        let nb = expect_count(line, &text, "boundary_facets")?;
        let mut boundary = BTreeMap::new();
        for _ in 0..nb {
            let (line, text) = next_content()?;
            let parts: Vec<&str> = text.split_whitespace().collect();
            if parts.len() != 3 {
                return Err(MeshError::Parse {
                    line,
                    msg: format!("expected 'i j label', found '{text}'"),
                });
            }
            let i: usize = parts[0].parse().map_err(|e| MeshError::Parse {
                line,
                msg: format!("bad vertex index: {e}"),
            })?;
            let j: usize = parts[1].parse().map_err(|e| MeshError::Parse {
                line,
                msg: format!("bad vertex index: {e}"),
            })?;
            let label = BoundaryLabel::parse(parts[2]).ok_or(MeshError::Parse {
                line,
                msg: format!("unknown boundary label '{}'", parts[2]),
            })?;
            if boundary.insert((i.min(j), i.max(j)), label).is_some() {
                return Err(MeshError::Parse {
                    line,
                    msg: format!("boundary facet ({i}, {j}) listed twice"),
                });
            }
        }

        Self::assemble(vertices, triangles, &boundary)
    }

    pub fn write_mesh_file(&self, path: impl AsRef<Path>) -> Result<(), MeshError> {
        let mut file = std::fs::File::create(path)?;
        self.write_to(&mut file)
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<(), MeshError> {
        writeln!(w, "vertices {}", self.vertices.len())?;
        for v in &self.vertices {
            writeln!(w, "{} {}", v[0], v[1])?;
        }
        writeln!(w, "triangles {}", self.triangles.len())?;
        for t in &self.triangles {
            writeln!(
                w,
                "{} {} {} {}",
                t.vertices[0],
                t.vertices[1],
                t.vertices[2],
                t.region.as_str()
            )?;
        }
        let boundary: Vec<&Facet> = self
            .facets
            .iter()
            .filter(|f| matches!(f.kind, FacetKind::Boundary(_)))
            .collect();
        writeln!(w, "boundary_facets {}", boundary.len())?;
        for f in boundary {
            let FacetKind::Boundary(label) = f.kind else {
                unreachable!()
            };
            writeln!(w, "{} {} {}", f.vertices[0], f.vertices[1], label.as_str())?;
        }
        Ok(())
    }

    /// Checks the conformity and labeling invariants.
    pub fn validate(&self) -> Result<(), MeshError> {
        for (fi, facet) in self.facets.iter().enumerate() {
            match facet.kind {
                FacetKind::Interior(region) => {
                    if facet.sides.len() != 2
                        || facet
                            .sides
                            .iter()
                            .any(|s| self.triangles[s.element].region != region)
                    {
                        return Err(MeshError::Validation {
                            msg: format!("interior facet {fi} has inconsistent neighbors"),
                        });
                    }
                }
                FacetKind::Interface => {
                    if facet.sides.len() != 2
                        || self.triangles[facet.sides[0].element].region != Region::Fluid
                        || self.triangles[facet.sides[1].element].region != Region::Solid
                    {
                        return Err(MeshError::Validation {
                            msg: format!("interface facet {fi} must have fluid then solid sides"),
                        });
                    }
                }
                FacetKind::Boundary(_) => {
                    if facet.sides.len() != 1 {
                        return Err(MeshError::Validation {
                            msg: format!("boundary facet {fi} must have exactly one neighbor"),
                        });
                    }
                }
            }
            // Shared facets are traversed in opposite directions by their two
            // neighbors (counterclockwise orientation on both sides).
            if facet.sides.len() == 2
                && facet.sides[0].same_direction == facet.sides[1].same_direction
            {
                return Err(MeshError::Validation {
                    msg: format!("facet {fi} is traversed in the same direction by both sides"),
                });
            }
            let h = self.facet_length(fi);
            let max_diam = facet
                .sides
                .iter()
                .map(|s| self.diameters[s.element])
                .fold(0.0, f64::max);
            if !(h > 0.0 && h <= max_diam * (1.0 + 1e-12)) {
                return Err(MeshError::Validation {
                    msg: format!("facet {fi} has length {h} outside (0, element diameter]"),
                });
            }
        }
        for (t, &area) in self.areas.iter().enumerate() {
            if area <= 0.0 {
                return Err(MeshError::Validation {
                    msg: format!("triangle {t} has non-positive area {area}"),
                });
            }
        }
        Ok(())
    }

    pub fn vertices(&self) -> &[[f64; 2]] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[Triangle] {
        &self.triangles
    }

    pub fn facets(&self) -> &[Facet] {
        &self.facets
    }

    pub fn triangle_facets(&self, element: usize) -> [usize; 3] {
        self.triangle_facets[element]
    }

    pub fn area(&self, element: usize) -> f64 {
        self.areas[element]
    }

    pub fn diameter(&self, element: usize) -> f64 {
        self.diameters[element]
    }

    pub fn facet_length(&self, facet: usize) -> f64 {
        let [a, b] = self.facets[facet].vertices;
        let (pa, pb) = (self.vertices[a], self.vertices[b]);
        ((pa[0] - pb[0]).powi(2) + (pa[1] - pb[1]).powi(2)).sqrt()
    }

    pub fn region_area(&self, region: Region) -> f64 {
        self.triangles
            .iter()
            .zip(&self.areas)
            .filter(|(t, _)| t.region == region)
            .map(|(_, a)| a)
            .sum()
    }

    pub fn elements_in(&self, region: Region) -> impl Iterator<Item = usize> + '_ {
        self.triangles
            .iter()
            .enumerate()
            .filter(move |(_, t)| t.region == region)
            .map(|(i, _)| i)
    }

    /// Affine map of an element: reference point = origin + jacobian * master point.
    pub fn element_map(&self, element: usize) -> ([f64; 2], [[f64; 2]; 2]) {
        let [a, b, c] = self.triangles[element].vertices;
        let (pa, pb, pc) = (self.vertices[a], self.vertices[b], self.vertices[c]);
        (
            pa,
            [
                [pb[0] - pa[0], pc[0] - pa[0]],
                [pb[1] - pa[1], pc[1] - pa[1]],
            ],
        )
    }

    pub fn has_outlet(&self) -> bool {
        self.facets
            .iter()
            .any(|f| f.kind == FacetKind::Boundary(BoundaryLabel::Outlet))
    }
}

impl fmt::Display for Mesh {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "mesh: {} vertices, {} triangles ({} fluid, {} solid), {} facets",
            self.vertices.len(),
            self.triangles.len(),
            self.elements_in(Region::Fluid).count(),
            self.elements_in(Region::Solid).count(),
            self.facets.len()
        )
    }
}

fn signed_area(vertices: &[[f64; 2]], tri: [usize; 3]) -> f64 {
    let (a, b, c) = (vertices[tri[0]], vertices[tri[1]], vertices[tri[2]]);
    (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1])
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    /// Independent facet count: distinct undirected vertex pairs over all
    /// triangle edges.
    fn set_based_edge_count(mesh: &Mesh) -> usize {
        let mut set = HashSet::new();
        for t in mesh.triangles() {
            for (a, b) in LOCAL_EDGES {
                let (ga, gb) = (t.vertices[a], t.vertices[b]);
                set.insert((ga.min(gb), ga.max(gb)));
            }
        }
        set.len()
    }

    #[test]
    fn square_n2_counts() {
        let mesh = Mesh::build_structured_square(2, 0.5).unwrap();
        assert_eq!(mesh.triangles().len(), 8);
        assert_eq!(mesh.elements_in(Region::Fluid).count(), 4);
        assert_eq!(mesh.elements_in(Region::Solid).count(), 4);
        let interfaces = mesh
            .facets()
            .iter()
            .filter(|f| f.kind == FacetKind::Interface)
            .count();
        assert_eq!(interfaces, 2);
    }

    #[test]
    fn square_n4_count() {
        let mesh = Mesh::build_structured_square(4, 0.5).unwrap();
        assert_eq!(mesh.triangles().len(), 32);
    }

    #[test]
    fn square_n8_facet_count_matches_edge_counter() {
        let mesh = Mesh::build_structured_square(8, 0.5).unwrap();
        assert_eq!(mesh.facets().len(), set_based_edge_count(&mesh));
        // 128 triangles and 32 boundary edges: E = (3 T + B) / 2.
        assert_eq!(mesh.facets().len(), 208);
        let boundary = mesh
            .facets()
            .iter()
            .filter(|f| matches!(f.kind, FacetKind::Boundary(_)))
            .count();
        assert_eq!(
            mesh.facets().len(),
            (3 * mesh.triangles().len() + boundary) / 2
        );
    }

    #[test]
    fn interface_facets_pair_fluid_and_solid_with_opposite_orientation() {
        let mesh = Mesh::build_structured_square(4, 0.25).unwrap();
        let mut count = 0;
        for f in mesh.facets() {
            if f.kind == FacetKind::Interface {
                count += 1;
                assert_eq!(mesh.triangles()[f.sides[0].element].region, Region::Fluid);
                assert_eq!(mesh.triangles()[f.sides[1].element].region, Region::Solid);
                assert_ne!(f.sides[0].same_direction, f.sides[1].same_direction);
            }
        }
        assert_eq!(count, 4);
    }

    #[test]
    fn region_areas_match_split() {
        for (n, split) in [(4, 0.5), (8, 0.25), (10, 0.3)] {
            let mesh = Mesh::build_structured_square(n, split).unwrap();
            assert!((mesh.region_area(Region::Fluid) - split).abs() <= 1e-12);
            assert!((mesh.region_area(Region::Solid) - (1.0 - split)).abs() <= 1e-12);
        }
    }

    #[test]
    fn positive_areas_and_facet_lengths() {
        let mesh = Mesh::build_structured_square(6, 0.5).unwrap();
        for t in 0..mesh.triangles().len() {
            assert!(mesh.area(t) > 0.0);
        }
        for f in 0..mesh.facets().len() {
            let h = mesh.facet_length(f);
            assert!(h > 0.0);
            let max_d = mesh.facets()[f]
                .sides
                .iter()
                .map(|s| mesh.diameter(s.element))
                .fold(0.0, f64::max);
            assert!(h <= max_d + 1e-15);
        }
    }

    #[test]
    fn split_off_grid_rejected() {
        let err = Mesh::build_structured_square(4, 0.3).unwrap_err();
        assert!(matches!(err, MeshError::SplitNotResolved { .. }));
    }

    #[test]
    fn file_roundtrip_identical() {
        let mesh = Mesh::build_structured_square(4, 0.5).unwrap();
        let mut buf = Vec::new();
        mesh.write_to(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        let reloaded = Mesh::read_from(std::io::Cursor::new(buf)).unwrap();
        assert_eq!(mesh.vertices(), reloaded.vertices());
        assert_eq!(mesh.triangles().len(), reloaded.triangles().len());
        for (a, b) in mesh.triangles().iter().zip(reloaded.triangles()) {
            assert_eq!(a.vertices, b.vertices);
            assert_eq!(a.region, b.region);
        }
        assert_eq!(mesh.facets().len(), reloaded.facets().len());
        for (a, b) in mesh.facets().iter().zip(reloaded.facets()) {
            assert_eq!(a.vertices, b.vertices);
            assert_eq!(a.kind, b.kind);
        }
        // Writing the reloaded mesh reproduces the file byte for byte.
        let mut buf2 = Vec::new();
        reloaded.write_to(&mut buf2).unwrap();
        assert_eq!(text, String::from_utf8(buf2).unwrap());
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let bad_region = "vertices 3\n0 0\n1 0\n0 1\ntriangles 1\n0 1 2 gas\nboundary_facets 0\n";
        let err = Mesh::read_from(std::io::Cursor::new(bad_region)).unwrap_err();
        match err {
            MeshError::Parse { line, .. } => assert_eq!(line, 6),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn unlabeled_boundary_edge_is_topology_error() {
        let text = "vertices 3\n0 0\n1 0\n0 1\ntriangles 1\n0 1 2 fluid\nboundary_facets 1\n0 1 GammaF-wall\n";
        let err = Mesh::read_from(std::io::Cursor::new(text)).unwrap_err();
        assert!(matches!(err, MeshError::Topology { .. }));
    }

    #[test]
    fn clockwise_triangle_is_orientation_error() {
        let text = "vertices 3\n0 0\n1 0\n0 1\ntriangles 1\n0 2 1 fluid\nboundary_facets 3\n0 1 GammaF-wall\n1 2 GammaF-wall\n0 2 GammaF-wall\n";
        let err = Mesh::read_from(std::io::Cursor::new(text)).unwrap_err();
        assert!(matches!(err, MeshError::Orientation { triangle: 0 }));
    }

    #[test]
    fn n1_split_must_be_zero_or_one() {
        // With one cell per side the only resolvable splits are 0 and 1.
        assert!(Mesh::build_structured_square(1, 0.5).is_err());
        let all_solid = Mesh::build_structured_square(1, 0.0).unwrap();
        assert_eq!(all_solid.elements_in(Region::Solid).count(), 2);
    }
}
