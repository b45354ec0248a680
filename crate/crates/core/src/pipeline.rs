//! Single-image pipeline: superpixels, region graph, semantic layers,
//! refinement, unary maps and the energy minimization.

use crate::anatomy::{decompose_nc_layers, layer_flags, refine_layers, AnatomyLabeling, LayerDecomposition, LayerFlag};
use crate::config::PipelineConfig;
use crate::error::{Result, StageExt};
use crate::ingest::{Image, LabelMap, ProbMap, CLASS_COUNT};
use crate::maps::{build_unary_maps, BackgroundVariant, LayerWeights, UnaryMaps};
use crate::optimizer::{
    build_constraint, pairwise_weights, solve, BackgroundConstraint, EnergyParams, PairwiseWeights, SolveOutcome,
};
use crate::superpixel::{build_region_graph, regionize_labels, regionize_probs, segment, RegionGraph, SuperpixelMap};

/// Semantic layer evidence for one image.
#[derive(Clone, Copy, Debug)]
pub enum Semantic<'a> {
    Probabilities(&'a ProbMap),
    Labels(&'a LabelMap),
}

/// Everything up to (not including) the background map; shared by variants.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub spmap: SuperpixelMap,
    pub graph: RegionGraph,
    pub sa: AnatomyLabeling,
    pub ncl: LayerDecomposition,
    pub nsa: AnatomyLabeling,
    pub flags: [LayerFlag; CLASS_COUNT],
    pub weights: PairwiseWeights,
    pub constraint: BackgroundConstraint,
}

#[derive(Clone, Debug)]
pub struct SaliencyResult {
    pub maps: UnaryMaps,
    pub layer_weights: LayerWeights,
    pub solve: SolveOutcome,
    /// Pixel saliency in [0, 255].
    pub rendered: Image,
}

pub fn prepare(
    image: &Image,
    semantic: Semantic<'_>,
    superpixels: Option<&SuperpixelMap>,
    config: &PipelineConfig,
) -> Result<Prepared> {
    let spmap = match superpixels {
        Some(sp) => sp.clone(),
        None => segment(image, &config.segment).stage("segment")?,
    };
    let graph = build_region_graph(image, &spmap).stage("region graph")?;
    let labels = match semantic {
        Semantic::Probabilities(p) => regionize_probs(p, &spmap),
        Semantic::Labels(l) => regionize_labels(l, &spmap),
    }
    .stage("semantic layers")?;
    let sa = AnatomyLabeling::semantic(labels);
    let ncl = decompose_nc_layers(&graph, &config.anatomy).stage("layer decomposition")?;
    let nsa = refine_layers(&sa, &ncl, &graph, config.anatomy.validity_fraction).stage("layer refinement")?;
    let flags = layer_flags(&nsa, &graph, &config.anatomy);
    let weights = pairwise_weights(&graph, &config.energy);
    let constraint = build_constraint(&nsa);
    Ok(Prepared {
        spmap,
        graph,
        sa,
        ncl,
        nsa,
        flags,
        weights,
        constraint,
    })
}

/// Builds the unary maps for one background variant.
pub fn unary_maps(
    prepared: &Prepared,
    config: &PipelineConfig,
    variant: BackgroundVariant,
) -> Result<(UnaryMaps, LayerWeights)> {
    build_unary_maps(&prepared.graph, &prepared.nsa, &prepared.flags, &config.maps, variant).stage("unary maps")
}

pub fn solve_prepared(
    prepared: &Prepared,
    maps: UnaryMaps,
    layer_weights: LayerWeights,
    energy: &EnergyParams,
) -> Result<SaliencyResult> {
    let solve = solve(&maps, &prepared.weights, &prepared.constraint, energy).stage("optimization")?;
    let rendered = solve.map.render(&prepared.spmap).stage("rendering")?;
    Ok(SaliencyResult {
        maps,
        layer_weights,
        solve,
        rendered,
    })
}

pub fn finish(prepared: &Prepared, config: &PipelineConfig, variant: BackgroundVariant) -> Result<SaliencyResult> {
    let (maps, lw) = unary_maps(prepared, config, variant)?;
    solve_prepared(prepared, maps, lw, &config.energy)
}

/// The whole pipeline with the configured background variant.
pub fn estimate_saliency(
    image: &Image,
    semantic: Semantic<'_>,
    superpixels: Option<&SuperpixelMap>,
    config: &PipelineConfig,
) -> Result<(Prepared, SaliencyResult)> {
    let prepared = prepare(image, semantic, superpixels, config)?;
    let result = finish(&prepared, config, config.background)?;
    Ok((prepared, result))
}
