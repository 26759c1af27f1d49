//! Module geometry and its discretization into a thermal network.
//!
//! The network is layered 2.5-D: the module footprint is cut into a strip of
//! tiles along its length, every layer contributes one node per tile, and the
//! hexagonal lattice layer contributes two (the CPCM cavity and the CFRN
//! walls that also carry the coolant channel). Nodes are numbered
//! tile-major so the conductance matrix is banded.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::materials::{EnthalpyCurve, MaterialProps, MaterialRegistry, CPCM};

/// In-plane tiles per hexagonal cell when no lattice is present.
pub const DEFAULT_STRIP_CELLS: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LayerRole {
    CellSimulator,
    AlPlate,
    CpcmLattice,
    ChannelLayer,
    CfrnShell,
    TopPanel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Layer {
    pub role: LayerRole,
    pub material: String,
    /// m
    pub thickness: f64,
    /// m, across the strip
    pub width: f64,
    /// m, along the strip
    pub length: f64,
    /// Heat source attached to this layer. Defaults to true for the cell
    /// simulator role.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub heated: Option<bool>,
}

impl Layer {
    pub fn new(role: LayerRole, material: &str, thickness: f64, width: f64, length: f64) -> Self {
        Self {
            role,
            material: material.to_string(),
            thickness,
            width,
            length,
            heated: None,
        }
    }

    pub fn is_heated(&self) -> bool {
        self.heated.unwrap_or(self.role == LayerRole::CellSimulator)
    }

    pub fn area(&self) -> f64 {
        self.width * self.length
    }
}

/// Layers listed bottom (heater side) to top, with one areal contact
/// resistance (m² K/W) per adjacent pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerStack {
    pub layers: Vec<Layer>,
    pub interfaces: Vec<f64>,
}

impl LayerStack {
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Geometry("stack has no layers".into()));
        }
        if self.interfaces.len() + 1 != self.layers.len() {
            return Err(Error::Geometry(format!(
                "{} layers need {} interfaces, got {}",
                self.layers.len(),
                self.layers.len() - 1,
                self.interfaces.len()
            )));
        }
        let (w0, l0) = (self.layers[0].width, self.layers[0].length);
        for (i, l) in self.layers.iter().enumerate() {
            if !(l.thickness > 0.0 && l.width > 0.0 && l.length > 0.0) {
                return Err(Error::Geometry(format!("layer {i} has non-positive dimensions")));
            }
            if (l.width - w0).abs() > 1e-9 || (l.length - l0).abs() > 1e-9 {
                return Err(Error::Geometry(format!(
                    "layer {i} in-plane dims {}x{} differ from {}x{}",
                    l.length, l.width, l0, w0
                )));
            }
        }
        if self.interfaces.iter().any(|r| !(*r >= 0.0)) {
            return Err(Error::Geometry("contact resistance must be non-negative".into()));
        }
        let lattices = self.layers.iter().filter(|l| l.role == LayerRole::CpcmLattice).count();
        if lattices > 1 {
            return Err(Error::Geometry("at most one lattice layer is supported".into()));
        }
        Ok(())
    }

    pub fn lattice_index(&self) -> Option<usize> {
        self.layers.iter().position(|l| l.role == LayerRole::CpcmLattice)
    }

    pub fn total_thickness(&self) -> f64 {
        self.layers.iter().map(|l| l.thickness).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LatticeVariant {
    Regular,
    Intensive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HexLattice {
    pub variant: LatticeVariant,
    pub n_cells: usize,
    /// Cavity depth, m. Must equal the lattice layer thickness.
    pub depth: f64,
    /// CFRN between a cavity and the channel it shares a wall with, m.
    pub wall_thickness: f64,
    /// m³, summed over all cavities.
    pub cpcm_volume: f64,
    /// Material filling the cavities.
    #[serde(default = "default_fill")]
    pub fill: String,
}

fn default_fill() -> String {
    CPCM.to_string()
}

impl HexLattice {
    pub fn validate(&self) -> Result<()> {
        if self.n_cells == 0 {
            return Err(Error::Geometry("lattice needs at least one cell".into()));
        }
        if !(self.depth > 0.0 && self.wall_thickness > 0.0 && self.cpcm_volume > 0.0) {
            return Err(Error::Geometry("lattice dimensions must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HexMetrics {
    /// Total cavity wall area, m².
    pub interface_area: f64,
    /// Apothem of one cell, m.
    pub mean_path: f64,
    /// Hexagon side, m.
    pub side: f64,
    /// kg
    pub per_cell_mass: f64,
}

pub fn hex_metrics(lattice: &HexLattice, fill: &MaterialProps) -> HexMetrics {
    let n = lattice.n_cells as f64;
    let cell_area = lattice.cpcm_volume / (n * lattice.depth);
    let side = (cell_area / (1.5 * 3f64.sqrt())).sqrt();
    HexMetrics {
        interface_area: 6.0 * n * side * lattice.depth,
        mean_path: 0.5 * 3f64.sqrt() * side,
        side,
        per_cell_mass: fill.rho_solid * lattice.cpcm_volume / n,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelPath {
    /// m
    pub width: f64,
    /// m
    pub height: f64,
    /// Serpentine legs, m.
    pub segments: Vec<f64>,
    /// CFRN conduction length between the host wall and the channel
    /// surface, m.
    pub wall_separation: f64,
}

impl ChannelPath {
    pub fn validate(&self) -> Result<()> {
        if !(self.width > 0.0 && self.height > 0.0 && self.wall_separation > 0.0) {
            return Err(Error::Geometry("channel dimensions must be positive".into()));
        }
        if self.segments.is_empty() || self.segments.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::Geometry("channel needs positive segment lengths".into()));
        }
        Ok(())
    }

    pub fn total_length(&self) -> f64 {
        self.segments.iter().sum()
    }

    pub fn flow_area(&self) -> f64 {
        self.width * self.height
    }

    pub fn wetted_perimeter(&self) -> f64 {
        2.0 * (self.width + self.height)
    }

    pub fn hydraulic_diameter(&self) -> f64 {
        4.0 * self.flow_area() / self.wetted_perimeter()
    }

    pub fn volume(&self) -> f64 {
        self.flow_area() * self.total_length()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NodeKind {
    Slab,
    Cavity,
    Wall,
}

/// Conductivity law of the material a node conducts through.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Conductor {
    pub k_solid: f64,
    pub k_liquid: f64,
    pub t_solidus: f64,
    pub t_liquidus: f64,
}

impl Conductor {
    fn of(m: &MaterialProps) -> Self {
        Self {
            k_solid: m.k_solid,
            k_liquid: m.k_liquid,
            t_solidus: m.t_solidus,
            t_liquidus: m.t_liquidus,
        }
    }

    pub fn is_variable(&self) -> bool {
        self.k_solid != self.k_liquid
    }

    pub fn k(&self, t: f64) -> f64 {
        let f = if self.t_liquidus > self.t_solidus {
            ((t - self.t_solidus) / (self.t_liquidus - self.t_solidus)).clamp(0.0, 1.0)
        } else if t >= self.t_liquidus {
            1.0
        } else {
            0.0
        };
        self.k_solid * (1.0 - f) + self.k_liquid * f
    }
}

#[derive(Debug, Clone)]
pub struct Node {
    pub id: usize,
    pub layer: usize,
    pub tile: usize,
    pub kind: NodeKind,
    /// m³
    pub volume: f64,
    /// (material, kg)
    pub parts: Vec<(String, f64)>,
    /// Sensible capacitance at constant phase, J/K.
    pub capacitance: f64,
    /// Extensive enthalpy curve (J) of everything lumped into the node.
    pub curve: EnthalpyCurve,
    pub conductor: Conductor,
    /// Phase-change material carried by the node, if any.
    pub pcm: Option<PcmShare>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcmShare {
    pub material: String,
    /// kg
    pub mass: f64,
    pub t_solidus: f64,
    pub t_liquidus: f64,
}

impl PcmShare {
    pub fn liquid_fraction(&self, t: f64) -> f64 {
        if self.t_liquidus > self.t_solidus {
            ((t - self.t_solidus) / (self.t_liquidus - self.t_solidus)).clamp(0.0, 1.0)
        } else if t >= self.t_liquidus {
            1.0
        } else {
            0.0
        }
    }
}

/// Series path between two nodes. Resistance is
/// `r_fixed + geom_a / k_a(T_a) + geom_b / k_b(T_b)`; the geometric
/// factors are nonzero only for nodes whose conductivity varies with phase.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub a: usize,
    pub b: usize,
    pub r_fixed: f64,
    pub geom_a: f64,
    pub geom_b: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryAttachment {
    pub node: usize,
    /// Exposed area, m².
    pub area: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SourceAttachment {
    pub layer: usize,
    /// (node, share of the source power); shares sum to one.
    pub nodes: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelSegment {
    pub host: usize,
    /// m
    pub length: f64,
    /// m²
    pub wetted_area: f64,
    /// m³
    pub volume: f64,
    /// Solid-side conductance from the host node to the channel surface, W/K.
    pub g_wall: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProbeTarget {
    Node(usize),
    Coolant(usize),
}

/// Physical spots thermocouples are placed on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProbeSite {
    /// Top face of the cell simulator (battery contact face).
    Cell,
    /// Floor of the coolant pathway.
    CoolantPath,
    /// Water inside the channel at mid-length.
    CoolantWater,
    /// Top of a CPCM cavity.
    CavityTop,
    /// Top surface of the whole stack.
    TopSurface,
}

#[derive(Debug, Clone)]
pub struct ThermalNetwork {
    pub nodes: Vec<Node>,
    pub edges: Vec<Edge>,
    pub boundaries: Vec<BoundaryAttachment>,
    pub sources: Vec<SourceAttachment>,
    pub segments: Vec<ChannelSegment>,
    pub channel: Option<ChannelPath>,
    pub probes: BTreeMap<String, ProbeTarget>,
    pub n_tiles: usize,
    /// Largest |i - j| over all edges.
    pub bandwidth: usize,
    stack: LayerStack,
    lattice: Option<HexLattice>,
}

impl ThermalNetwork {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn stack(&self) -> &LayerStack {
        &self.stack
    }

    pub fn lattice(&self) -> Option<&HexLattice> {
        self.lattice.as_ref()
    }

    pub fn total_capacitance(&self) -> f64 {
        self.nodes.iter().map(|n| n.capacitance).sum()
    }

    pub fn material_mass(&self, material: &str) -> f64 {
        self.nodes
            .iter()
            .flat_map(|n| n.parts.iter())
            .filter(|(m, _)| m == material)
            .map(|(_, kg)| kg)
            .sum()
    }

    pub fn probe(&self, label: &str) -> Result<ProbeTarget> {
        self.probes
            .get(label)
            .copied()
            .ok_or_else(|| Error::UnknownProbe(label.to_string()))
    }

    pub fn edge_conductance(&self, e: &Edge, t: &[f64]) -> f64 {
        let mut r = e.r_fixed;
        if e.geom_a > 0.0 {
            r += e.geom_a / self.nodes[e.a].conductor.k(t[e.a]);
        }
        if e.geom_b > 0.0 {
            r += e.geom_b / self.nodes[e.b].conductor.k(t[e.b]);
        }
        1.0 / r
    }

    /// Node holding a probe site, at the tile nearest the strip centre.
    pub fn locate(&self, site: ProbeSite) -> Option<ProbeTarget> {
        let mid = self.n_tiles / 2;
        let layers = &self.stack.layers;
        let find = |layer: usize, kind: NodeKind| {
            self.nodes
                .iter()
                .find(|n| n.layer == layer && n.tile == mid && n.kind == kind)
                .map(|n| ProbeTarget::Node(n.id))
        };
        match site {
            ProbeSite::Cell => {
                let heater = layers.iter().position(|l| l.role == LayerRole::CellSimulator)?;
                let plate = layers
                    .iter()
                    .enumerate()
                    .skip(heater + 1)
                    .find(|(_, l)| l.role == LayerRole::AlPlate)
                    .map(|(i, _)| i)
                    .filter(|&i| i == heater + 1)
                    .unwrap_or(heater);
                find(plate, NodeKind::Slab)
            }
            ProbeSite::CoolantPath => {
                if let Some(li) = self.stack.lattice_index() {
                    find(li, NodeKind::Wall)
                } else {
                    let ci = layers.iter().position(|l| l.role == LayerRole::ChannelLayer)?;
                    find(ci, NodeKind::Slab)
                }
            }
            ProbeSite::CoolantWater => {
                if self.segments.is_empty() {
                    None
                } else {
                    Some(ProbeTarget::Coolant(self.segments.len() / 2))
                }
            }
            ProbeSite::CavityTop => find(self.stack.lattice_index()?, NodeKind::Cavity),
            ProbeSite::TopSurface => {
                let top = layers.len() - 1;
                let kind = if Some(top) == self.stack.lattice_index() {
                    NodeKind::Cavity
                } else {
                    NodeKind::Slab
                };
                find(top, kind)
            }
        }
    }

    /// Bind labelled probe sites; every label must resolve.
    pub fn bind_probes(&mut self, sites: &[(String, ProbeSite)]) -> Result<()> {
        for (label, site) in sites {
            let target = self
                .locate(*site)
                .ok_or_else(|| Error::Geometry(format!("probe {label} has no {site:?} in this stack")))?;
            self.probes.insert(label.clone(), target);
        }
        Ok(())
    }
}

/// Thermocouple labels and their placement per registry scenario.
pub fn probe_sites(scenario_id: &str) -> Result<Vec<(String, ProbeSite)>> {
    use ProbeSite::*;
    let list: &[(&str, ProbeSite)] = match scenario_id {
        "S1" => &[("TC-4", Cell)],
        "S2" => &[
            ("TC-1", Cell),
            ("TC-2", CavityTop),
            ("TC-3", CoolantPath),
            ("TC-9", Cell),
            ("TC-10", CavityTop),
            ("TC-11", CoolantWater),
        ],
        "S3" => &[("TC-6", TopSurface), ("TC-7", CoolantPath)],
        "S4" => &[
            ("TC-5", CoolantPath),
            ("TC-8", TopSurface),
            ("TC-13", Cell),
            ("TC-14", CavityTop),
            ("TC-15", CoolantWater),
            ("TC-18", TopSurface),
            ("TC-20", Cell),
        ],
        "S5" => &[("TC-12", Cell), ("TC-16", Cell), ("TC-17", CoolantPath)],
        "S6" => &[],
        "S7" => &[("cpcm-cavity", CavityTop), ("water-path", CoolantPath)],
        other => return Err(Error::Invalid(format!("unknown scenario {other}"))),
    };
    let mut v: Vec<(String, ProbeSite)> = vec![("cell".to_string(), Cell)];
    v.extend(list.iter().map(|(l, s)| (l.to_string(), *s)));
    Ok(v)
}

/// Bindings of a registry scenario's labels on an already built network.
pub fn probe_map(network: &ThermalNetwork, scenario_id: &str) -> Result<BTreeMap<String, ProbeTarget>> {
    probe_sites(scenario_id)?
        .into_iter()
        .map(|(label, site)| {
            network
                .locate(site)
                .map(|t| (label.clone(), t))
                .ok_or(Error::UnknownProbe(label))
        })
        .collect()
}

/// Discretization knobs beyond the geometry itself.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Discretization {
    /// Tiles per hexagonal cell along the strip.
    pub resolution: usize,
    /// Coolant segments; zero picks two per tile.
    pub n_segments: usize,
}

impl Default for Discretization {
    fn default() -> Self {
        Self {
            resolution: 1,
            n_segments: 0,
        }
    }
}

/// Half-resistance contribution of a node: fixed part and phase-dependent
/// geometric factor.
fn half(node: &Node, length: f64, area: f64) -> (f64, f64) {
    if node.conductor.is_variable() {
        (0.0, length / area)
    } else {
        (length / (node.conductor.k_solid * area), 0.0)
    }
}

struct Builder<'a> {
    reg: &'a MaterialRegistry,
    nodes: Vec<Node>,
    edges: Vec<Edge>,
    boundaries: Vec<BoundaryAttachment>,
}

impl<'a> Builder<'a> {
    fn node(
        &mut self,
        layer: usize,
        tile: usize,
        kind: NodeKind,
        volume: f64,
        parts: Vec<(&str, f64)>,
        conductor: &str,
    ) -> Result<usize> {
        let id = self.nodes.len();
        let mut curves = Vec::new();
        let mut capacitance = 0.0;
        let mut pcm = None;
        let mut owned = Vec::new();
        for (name, volume_part) in parts {
            let m = self.reg.get(name)?;
            let mass = m.rho_solid * volume_part;
            capacitance += mass * m.cp;
            if m.is_phase_change() {
                pcm = Some(PcmShare {
                    material: m.name.clone(),
                    mass,
                    t_solidus: m.t_solidus,
                    t_liquidus: m.t_liquidus,
                });
            }
            curves.push((EnthalpyCurve::for_material(m), mass));
            owned.push((name.to_string(), mass));
        }
        let refs: Vec<(&EnthalpyCurve, f64)> = curves.iter().map(|(c, m)| (c, *m)).collect();
        let curve = EnthalpyCurve::combine(&format!("node {id}"), &refs);
        if !(capacitance > 0.0) {
            return Err(Error::Geometry(format!("node {id} has no heat capacity")));
        }
        self.nodes.push(Node {
            id,
            layer,
            tile,
            kind,
            volume,
            parts: owned,
            capacitance,
            curve,
            conductor: Conductor::of(self.reg.get(conductor)?),
            pcm,
        });
        Ok(id)
    }

    /// Link two nodes through `(length, area)` halves plus a fixed resistance.
    fn link(&mut self, a: usize, ha: (f64, f64), b: usize, hb: (f64, f64), r_extra: f64) {
        let (fa, ga) = half(&self.nodes[a], ha.0, ha.1);
        let (fb, gb) = half(&self.nodes[b], hb.0, hb.1);
        let (a, b, ga, gb) = if a < b { (a, b, ga, gb) } else { (b, a, gb, ga) };
        self.edges.push(Edge {
            a,
            b,
            r_fixed: fa + fb + r_extra,
            geom_a: ga,
            geom_b: gb,
        });
    }

    fn expose(&mut self, node: usize, area: f64) {
        if area > 0.0 {
            self.boundaries.push(BoundaryAttachment { node, area });
        }
    }
}

/// Per-tile node ids of one layer.
#[derive(Clone, Copy)]
enum TileNodes {
    Slab(usize),
    Lattice { cavity: usize, wall: usize },
}

impl TileNodes {
    fn all(self) -> Vec<usize> {
        match self {
            TileNodes::Slab(n) => vec![n],
            TileNodes::Lattice { cavity, wall } => vec![cavity, wall],
        }
    }
}

pub fn build_network(
    stack: &LayerStack,
    lattice: Option<&HexLattice>,
    channel: Option<&ChannelPath>,
    reg: &MaterialRegistry,
    disc: Discretization,
) -> Result<ThermalNetwork> {
    stack.validate()?;
    if disc.resolution == 0 {
        return Err(Error::Geometry("resolution must be at least 1".into()));
    }
    let lattice_idx = stack.lattice_index();
    match (lattice_idx, lattice) {
        (Some(_), None) => return Err(Error::Geometry("lattice layer without lattice record".into())),
        (None, Some(_)) => return Err(Error::Geometry("lattice record without lattice layer".into())),
        _ => {}
    }
    if let Some(lat) = lattice {
        lat.validate()?;
        let li = lattice_idx.unwrap();
        if (stack.layers[li].thickness - lat.depth).abs() > 1e-12 {
            return Err(Error::Geometry("lattice depth must equal the lattice layer thickness".into()));
        }
    }
    let channel_host = lattice_idx.or_else(|| stack.layers.iter().position(|l| l.role == LayerRole::ChannelLayer));
    if let Some(ch) = channel {
        ch.validate()?;
        if channel_host.is_none() {
            return Err(Error::Geometry("channel needs a lattice or channel layer to run in".into()));
        }
    }

    let cells = lattice.map_or(DEFAULT_STRIP_CELLS, |l| l.n_cells);
    let n_tiles = cells * disc.resolution;
    let width = stack.layers[0].width;
    let length = stack.layers[0].length;
    let dx = length / n_tiles as f64;
    let a_tile = width * dx;
    let n_layers = stack.layers.len();

    let channel_vol_tile = channel.map_or(0.0, |c| c.volume() / n_tiles as f64);

    let mut b = Builder {
        reg,
        nodes: Vec::new(),
        edges: Vec::new(),
        boundaries: Vec::new(),
    };
    let mut grid: Vec<Vec<TileNodes>> = Vec::with_capacity(n_tiles);
    // lattice area split, computed once
    let lattice_split = lattice.map(|lat| {
        let foot = width * length;
        let phi = lat.cpcm_volume / (foot * lat.depth);
        (phi, hex_metrics(lat, reg.get(&lat.fill).expect("checked below")))
    });
    if let Some(lat) = lattice {
        reg.get(&lat.fill)?;
        let (phi, _) = lattice_split.unwrap();
        if !(phi < 1.0) {
            return Err(Error::Geometry("CPCM volume exceeds the lattice envelope".into()));
        }
        let wall_vol = (1.0 - phi) * a_tile * lat.depth;
        if channel_vol_tile >= wall_vol {
            return Err(Error::Geometry("channel does not fit inside the lattice walls".into()));
        }
    }

    for tile in 0..n_tiles {
        let mut row = Vec::with_capacity(n_layers);
        for (li, layer) in stack.layers.iter().enumerate() {
            let vol = a_tile * layer.thickness;
            let hosts_channel = channel.is_some() && Some(li) == channel_host;
            if layer.role == LayerRole::CpcmLattice {
                let lat = lattice.unwrap();
                let (phi, _) = lattice_split.unwrap();
                let v_cav = phi * vol;
                let v_wall = vol - v_cav - if hosts_channel { channel_vol_tile } else { 0.0 };
                let cavity = b.node(li, tile, NodeKind::Cavity, v_cav, vec![(&lat.fill, v_cav)], &lat.fill)?;
                let wall = b.node(li, tile, NodeKind::Wall, v_wall, vec![(&layer.material, v_wall)], &layer.material)?;
                row.push(TileNodes::Lattice { cavity, wall });
            } else {
                let v_solid = vol - if hosts_channel { channel_vol_tile } else { 0.0 };
                if v_solid <= 0.0 {
                    return Err(Error::Geometry("channel does not fit inside the channel layer".into()));
                }
                let n = b.node(li, tile, NodeKind::Slab, v_solid, vec![(&layer.material, v_solid)], &layer.material)?;
                row.push(TileNodes::Slab(n));
            }
        }
        grid.push(row);
    }

    // Through-thickness links and cavity-wall exchange.
    for tile in 0..n_tiles {
        for li in 0..n_layers {
            let here = grid[tile][li];
            if let (TileNodes::Lattice { cavity, wall }, Some((_, m))) = (here, lattice_split) {
                let lat = lattice.unwrap();
                let a_int = m.interface_area / n_tiles as f64;
                let wall_k = reg.get(&stack.layers[li].material)?.k_solid;
                // CPCM conduction to the wall face, then half the wall.
                let r_wall = 0.5 * lat.wall_thickness / (wall_k * a_int);
                b.link(cavity, (m.mean_path, a_int), wall, (0.0, 1.0), r_wall);
            }
            if li + 1 == n_layers {
                continue;
            }
            let above = grid[tile][li + 1];
            let r_contact = stack.interfaces[li];
            let t_lo = stack.layers[li].thickness;
            let t_hi = stack.layers[li + 1].thickness;
            let phi = lattice_split.map_or(1.0, |s| s.0);
            let pairs: Vec<(usize, usize, f64)> = match (here, above) {
                (TileNodes::Slab(x), TileNodes::Slab(y)) => vec![(x, y, a_tile)],
                (TileNodes::Slab(x), TileNodes::Lattice { cavity, wall })
                | (TileNodes::Lattice { cavity, wall }, TileNodes::Slab(x)) => vec![
                    (x, cavity, phi * a_tile),
                    (x, wall, (1.0 - phi) * a_tile),
                ],
                _ => unreachable!("single lattice layer"),
            };
            for (x, y, area) in pairs {
                let (lo, hi) = if b.nodes[x].layer == li { (x, y) } else { (y, x) };
                b.link(lo, (0.5 * t_lo, area), hi, (0.5 * t_hi, area), r_contact / area);
            }
        }
    }

    // In-plane links between neighbouring tiles.
    for tile in 0..n_tiles.saturating_sub(1) {
        for (li, layer) in stack.layers.iter().enumerate() {
            match (grid[tile][li], grid[tile + 1][li]) {
                (TileNodes::Slab(x), TileNodes::Slab(y)) => {
                    let area = width * layer.thickness;
                    b.link(x, (0.5 * dx, area), y, (0.5 * dx, area), 0.0);
                }
                (TileNodes::Lattice { wall: x, .. }, TileNodes::Lattice { wall: y, .. }) => {
                    let phi = lattice_split.unwrap().0;
                    let area = (1.0 - phi) * width * layer.thickness;
                    b.link(x, (0.5 * dx, area), y, (0.5 * dx, area), 0.0);
                }
                _ => unreachable!(),
            }
        }
    }

    // Exposed faces: bottom, top, the two long sides, and the strip ends.
    for tile in 0..n_tiles {
        for (li, layer) in stack.layers.iter().enumerate() {
            let nodes = grid[tile][li];
            let mut side = 2.0 * dx * layer.thickness;
            if tile == 0 {
                side += width * layer.thickness;
            }
            if tile + 1 == n_tiles {
                side += width * layer.thickness;
            }
            let face = |b: &mut Builder, frac_cav: f64| match nodes {
                TileNodes::Slab(n) => b.expose(n, a_tile),
                TileNodes::Lattice { cavity, wall } => {
                    b.expose(cavity, frac_cav * a_tile);
                    b.expose(wall, (1.0 - frac_cav) * a_tile);
                }
            };
            let phi = lattice_split.map_or(1.0, |s| s.0);
            if li == 0 {
                face(&mut b, phi);
            }
            if li + 1 == n_layers {
                face(&mut b, phi);
            }
            match nodes {
                TileNodes::Slab(n) => b.expose(n, side),
                TileNodes::Lattice { wall, .. } => b.expose(wall, side),
            }
        }
    }

    // Coolant segments, spread evenly over the tiles along the serpentine.
    let mut segments = Vec::new();
    if let (Some(ch), Some(host_layer)) = (channel, channel_host) {
        let n_seg = if disc.n_segments == 0 { 2 * n_tiles } else { disc.n_segments };
        let seg_len = ch.total_length() / n_seg as f64;
        let host_k = reg.get(&stack.layers[host_layer].material)?.k_solid;
        for j in 0..n_seg {
            let tile = (j * n_tiles) / n_seg;
            let host = match grid[tile][host_layer] {
                TileNodes::Slab(n) => n,
                TileNodes::Lattice { wall, .. } => wall,
            };
            let wetted = ch.wetted_perimeter() * seg_len;
            segments.push(ChannelSegment {
                host,
                length: seg_len,
                wetted_area: wetted,
                volume: ch.flow_area() * seg_len,
                g_wall: host_k * wetted / ch.wall_separation,
            });
        }
    }

    let sources = stack
        .layers
        .iter()
        .enumerate()
        .filter(|(_, l)| l.is_heated())
        .map(|(li, _)| SourceAttachment {
            layer: li,
            nodes: (0..n_tiles)
                .flat_map(|t| grid[t][li].all())
                .map(|n| (n, 1.0 / n_tiles as f64))
                .collect(),
        })
        .collect();

    let bandwidth = b.edges.iter().map(|e| e.b - e.a).max().unwrap_or(0);
    let net = ThermalNetwork {
        nodes: b.nodes,
        edges: b.edges,
        boundaries: b.boundaries,
        sources,
        segments,
        channel: channel.cloned(),
        probes: BTreeMap::new(),
        n_tiles,
        bandwidth,
        stack: stack.clone(),
        lattice: lattice.cloned(),
    };
    check_connected(&net)?;
    Ok(net)
}

/// A bar of `n` equal cells of one material, heated and exposed at cell 0.
/// With `n = 1` this is a single lumped node. Probes: `cell` on the first
/// node, `end` on the last.
pub fn rod_network(
    reg: &MaterialRegistry,
    material: &str,
    n: usize,
    length: f64,
    area: f64,
    exposed_area: f64,
) -> Result<ThermalNetwork> {
    if n == 0 || !(length > 0.0 && area > 0.0 && exposed_area >= 0.0) {
        return Err(Error::Geometry("rod needs cells, positive length and area".into()));
    }
    let dx = length / n as f64;
    let mut b = Builder {
        reg,
        nodes: Vec::new(),
        edges: Vec::new(),
        boundaries: Vec::new(),
    };
    for i in 0..n {
        b.node(0, i, NodeKind::Slab, dx * area, vec![(material, dx * area)], material)?;
        if i > 0 {
            b.link(i - 1, (dx / 2.0, area), i, (dx / 2.0, area), 0.0);
        }
    }
    b.expose(0, exposed_area);
    let width = area.sqrt();
    let probes = BTreeMap::from([
        ("cell".to_string(), ProbeTarget::Node(0)),
        ("end".to_string(), ProbeTarget::Node(n - 1)),
    ]);
    Ok(ThermalNetwork {
        nodes: b.nodes,
        edges: b.edges,
        boundaries: b.boundaries,
        sources: vec![SourceAttachment {
            layer: 0,
            nodes: vec![(0, 1.0)],
        }],
        segments: Vec::new(),
        channel: None,
        probes,
        n_tiles: n,
        bandwidth: usize::from(n > 1),
        stack: LayerStack {
            layers: vec![Layer::new(LayerRole::CellSimulator, material, length, width, width)],
            interfaces: Vec::new(),
        },
        lattice: None,
    })
}

fn check_connected(net: &ThermalNetwork) -> Result<()> {
    let n = net.nodes.len();
    let mut adj = vec![Vec::new(); n];
    for e in &net.edges {
        adj[e.a].push(e.b);
        adj[e.b].push(e.a);
    }
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([0]);
    seen[0] = true;
    while let Some(i) = queue.pop_front() {
        for &j in &adj[i] {
            if !seen[j] {
                seen[j] = true;
                queue.push_back(j);
            }
        }
    }
    if seen.iter().all(|s| *s) {
        Ok(())
    } else {
        Err(Error::Geometry("network graph is disconnected".into()))
    }
}

/// Slab conductance k·A/L, W/K.
pub fn slab_conductance(k: f64, area: f64, thickness: f64) -> f64 {
    k * area / thickness
}

/// Interface conductance A/R'', W/K.
pub fn contact_conductance(area: f64, r_contact: f64) -> f64 {
    area / r_contact
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::materials::{builtin_materials, ALUMINUM_6101, CFRN, POLYIMIDE};
    use approx::assert_relative_eq;

    const W: f64 = 0.0508;
    const L: f64 = 0.1524;

    fn lattice(n: usize) -> HexLattice {
        HexLattice {
            variant: if n > 7 { LatticeVariant::Intensive } else { LatticeVariant::Regular },
            n_cells: n,
            depth: 0.01,
            wall_thickness: 0.002,
            cpcm_volume: 4.0e-5,
            fill: CPCM.into(),
        }
    }

    fn stack5() -> LayerStack {
        LayerStack {
            layers: vec![
                Layer::new(LayerRole::CellSimulator, POLYIMIDE, 0.00178, W, L),
                Layer::new(LayerRole::AlPlate, ALUMINUM_6101, 0.006, W, L),
                Layer::new(LayerRole::CfrnShell, CFRN, 0.001, W, L),
                Layer::new(LayerRole::CpcmLattice, CFRN, 0.01, W, L),
                Layer::new(LayerRole::TopPanel, CFRN, 0.0015, W, L),
            ],
            interfaces: vec![0.0, 2.5e-5, 0.0, 0.0],
        }
    }

    fn channel() -> ChannelPath {
        ChannelPath {
            width: 0.003,
            height: 0.003,
            segments: vec![0.1, 0.1, 0.1],
            wall_separation: 0.0015,
        }
    }

    #[test]
    fn hex_side_from_volume() {
        let mut lat = lattice(1);
        lat.cpcm_volume = 2.598e-5;
        let m = hex_metrics(&lat, builtin_materials().get(CPCM).unwrap());
        assert!((m.side - 0.0316).abs() < 5e-5, "{}", m.side);
        // numeric cross-check: area of the recovered hexagon
        let area = 1.5 * 3f64.sqrt() * m.side * m.side;
        assert_relative_eq!(area * lat.depth, lat.cpcm_volume, max_relative = 1e-12);
    }

    #[test]
    fn quadrupling_cells_doubles_interface() {
        let reg = builtin_materials();
        let c = reg.get(CPCM).unwrap();
        let a = hex_metrics(&lattice(5), c);
        let b = hex_metrics(&lattice(20), c);
        assert_relative_eq!(b.interface_area, 2.0 * a.interface_area, max_relative = 1e-12);
        assert_relative_eq!(b.mean_path, 0.5 * a.mean_path, max_relative = 1e-12);
        let r = hex_metrics(&lattice(7), c);
        let i = hex_metrics(&lattice(19), c);
        assert!(i.interface_area > r.interface_area);
        assert!(i.mean_path < r.mean_path);
    }

    #[test]
    fn interface_and_slab_conductances() {
        let area = 7.742e-3;
        assert!((contact_conductance(area, 2.5e-5) - 309.7).abs() < 0.05);
        assert!((slab_conductance(218.0, area, 0.006) - 281.3).abs() < 0.1);
        assert_relative_eq!(W * L, area, max_relative = 1e-3);
    }

    #[test]
    fn node_count_rule() {
        let reg = builtin_materials();
        let net = build_network(&stack5(), Some(&lattice(7)), Some(&channel()), &reg, Discretization::default()).unwrap();
        // four slab layers plus a two-node lattice layer, seven tiles
        assert_eq!(net.len(), (4 + 2) * 7);
        assert_eq!(net.n_tiles, 7);
        assert!(net.bandwidth <= 6);
    }

    #[test]
    fn cpcm_mass_independent_of_resolution() {
        let reg = builtin_materials();
        let lat = lattice(7);
        let expect = reg.get(CPCM).unwrap().rho_solid * lat.cpcm_volume;
        let mut caps = Vec::new();
        for res in [1, 2, 3, 5] {
            let disc = Discretization { resolution: res, n_segments: 0 };
            let net = build_network(&stack5(), Some(&lat), Some(&channel()), &reg, disc).unwrap();
            assert_relative_eq!(net.material_mass(CPCM), expect, max_relative = 1e-9);
            caps.push(net.total_capacitance());
        }
        for c in &caps {
            assert_relative_eq!(*c, caps[0], max_relative = 1e-3);
        }
    }

    #[test]
    fn mismatched_dims_rejected() {
        let reg = builtin_materials();
        let mut s = stack5();
        s.layers[2].width = 0.04;
        assert!(matches!(
            build_network(&s, Some(&lattice(7)), None, &reg, Discretization::default()),
            Err(Error::Geometry(_))
        ));
        let mut s = stack5();
        s.interfaces.pop();
        assert!(s.validate().is_err());
    }

    #[test]
    fn probes_resolve_per_scenario() {
        let reg = builtin_materials();
        let net = build_network(&stack5(), Some(&lattice(7)), Some(&channel()), &reg, Discretization::default()).unwrap();
        let map = probe_map(&net, "S3").unwrap();
        assert!(map.contains_key("TC-6") && map.contains_key("TC-7"));
        let s1 = LayerStack {
            layers: stack5().layers[..2].to_vec(),
            interfaces: vec![0.0],
        };
        let mut net1 = build_network(&s1, None, None, &reg, Discretization::default()).unwrap();
        net1.bind_probes(&probe_sites("S1").unwrap()).unwrap();
        assert!(net1.probe("TC-4").is_ok());
        assert!(matches!(net1.probe("TC-99"), Err(Error::UnknownProbe(_))));
        // S4 sites need a lattice, so they cannot bind on the bare plate
        assert!(net1.bind_probes(&probe_sites("S4").unwrap()).is_err());
    }
}
