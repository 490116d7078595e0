//! Pipeline stages behind the command-line subcommands. Stages hand off
//! through files in `out_dir`.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::afap::{extract_section, section_angle_report, AngleReport, DiscreteSection};
use crate::bundle_graph::{assemble_block_matrix, build_base_knn, BlockSparseMatrix, BundleSampleSet};
use crate::cloud::PointCloud;
use crate::config::{RunConfig, SamplingMode};
use crate::embedding::{hbdm_embed, hdm_embed, hdm_normalize, EmbeddingCoordinates};
use crate::error::{HdmError, Result};
use crate::io;
use crate::laplacian::{alpha_normalize_owned, build_laplacian_owned, degree_vector, LaplacianVariant};
use crate::spectral::{cluster_eigenvalues, laplacian_eigenpairs, ClusterReport, SpectralResult};
use crate::svg;
use crate::tangent_pca::{estimate_frames, FrameSet, TransportTable};

/// File names inside a run directory.
#[derive(Clone, Debug)]
pub struct RunPaths {
    pub dir: PathBuf,
}

impl RunPaths {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn config(&self) -> PathBuf {
        self.file("config.txt")
    }
    pub fn base(&self) -> PathBuf {
        self.file("base.txt")
    }
    pub fn bundle(&self) -> PathBuf {
        self.file("bundle.txt")
    }
    pub fn frames(&self) -> PathBuf {
        self.file("frames.txt")
    }
    pub fn transports(&self) -> PathBuf {
        self.file("transports.txt")
    }
    pub fn weights_text(&self) -> PathBuf {
        self.file("weights.txt")
    }
    pub fn weights_binary(&self) -> PathBuf {
        self.file("weights.bin")
    }
    pub fn degrees(&self) -> PathBuf {
        self.file("degrees.txt")
    }
    pub fn build_meta(&self) -> PathBuf {
        self.file("build.json")
    }
    pub fn eigenvalues(&self) -> PathBuf {
        self.file("eigenvalues.csv")
    }
    pub fn spectrum(&self) -> PathBuf {
        self.file("spectrum.txt")
    }
    pub fn clusters(&self) -> PathBuf {
        self.file("clusters.json")
    }
    pub fn eigen_plot(&self) -> PathBuf {
        self.file("eigenvalues.svg")
    }
    pub fn hdm(&self) -> PathBuf {
        self.file("hdm.csv")
    }
    pub fn hdm_normalized(&self) -> PathBuf {
        self.file("hdm_normalized.csv")
    }
    pub fn hbdm(&self) -> PathBuf {
        self.file("hbdm.csv")
    }
    pub fn section(&self) -> PathBuf {
        self.file("section.txt")
    }
    pub fn section_plot(&self) -> PathBuf {
        self.file("section.svg")
    }
    pub fn afap_summary(&self) -> PathBuf {
        self.file("afap.json")
    }
    pub fn report(&self) -> PathBuf {
        self.file("report.json")
    }
    pub fn timing(&self, stage: &str) -> PathBuf {
        self.file(&format!("timing_{stage}.json"))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BuildMetadata {
    pub n: usize,
    pub nnz: usize,
    pub block_offsets: Vec<usize>,
    pub base_edges: usize,
    pub alpha: f64,
    pub variant: LaplacianVariant,
    pub mode: SamplingMode,
    /// Intrinsic dimension of the estimated frames in empirical mode.
    pub frame_dim: Option<usize>,
}

/// Output of [`build_weights`].
#[derive(Clone, Debug)]
pub struct BuiltWeights {
    /// `W_α`.
    pub weights: BlockSparseMatrix,
    /// Degrees of `W` before α-normalization.
    pub raw_degrees: Vec<f64>,
    pub base_edges: usize,
    pub frames: Option<FrameSet>,
    pub transports: Option<TransportTable>,
}

/// Base graph, (in empirical mode) frames and transports, assembly and
/// α-normalization.
pub fn build_weights(cfg: &RunConfig, samples: &BundleSampleSet) -> Result<BuiltWeights> {
    let graph = build_base_knn(samples.base_points(), cfg.k_base)?;
    graph.require_connected()?;
    let kernel = cfg.kernel();
    let (w, frames, transports) = match cfg.mode {
        SamplingMode::Exact => (assemble_block_matrix(samples, &graph, &kernel, None)?, None, None),
        SamplingMode::Empirical => {
            let cloud = PointCloud::from_sphere(samples.base_points());
            let frames = estimate_frames(&cloud, &cfg.pca())?;
            let table = TransportTable::from_edges(&frames, &graph.edges())?;
            let coefficients = samples.to_coefficients(&frames)?;
            let w = assemble_block_matrix(&coefficients, &graph, &kernel, Some(&table))?;
            (w, Some(frames), Some(table))
        }
    };
    let raw_degrees = degree_vector(&w)?.into_inner();
    Ok(BuiltWeights {
        weights: alpha_normalize_owned(w, cfg.alpha)?,
        raw_degrees,
        base_edges: graph.edge_count(),
        frames,
        transports,
    })
}

/// Smallest `m_eigs` eigenpairs of the symmetric Laplacian of `W_α`, with clusters.
pub fn solve_spectrum(cfg: &RunConfig, weights: BlockSparseMatrix) -> Result<(SpectralResult, ClusterReport)> {
    let op = build_laplacian_owned(weights, LaplacianVariant::Symmetric)?;
    let spec = laplacian_eigenpairs(&op, cfg.m_eigs.min(op.n()), &cfg.solver())?;
    let clusters = cluster_eigenvalues(&spec.eigenvalues, cfg.rel_gap);
    Ok((spec, clusters))
}

fn prepare(cfg: &RunConfig) -> Result<RunPaths> {
    std::fs::create_dir_all(&cfg.out_dir)?;
    let paths = RunPaths::new(&cfg.out_dir);
    std::fs::write(paths.config(), cfg.to_text())?;
    Ok(paths)
}

fn record_timing(paths: &RunPaths, stage: &str, started: Instant) -> Result<()> {
    io::write_json(
        &paths.timing(stage),
        &StageTiming {
            stage: stage.to_string(),
            seconds: started.elapsed().as_secs_f64(),
        },
    )
}

pub fn cmd_sample(cfg: &RunConfig) -> Result<BundleSampleSet> {
    let started = Instant::now();
    let paths = prepare(cfg)?;
    let samples = BundleSampleSet::sample_exact(cfg.n_base, cfg.n_fibre, cfg.fibre_sampling, cfg.seed);
    io::write_base_points(&paths.base(), samples.base_points())?;
    io::write_bundle(&paths.bundle(), &samples)?;
    record_timing(&paths, "sample", started)?;
    Ok(samples)
}

pub fn cmd_build(cfg: &RunConfig) -> Result<BuildMetadata> {
    let started = Instant::now();
    let paths = prepare(cfg)?;
    let samples = io::read_bundle(&paths.bundle())?;
    let built = build_weights(cfg, &samples)?;
    if let (Some(frames), Some(table)) = (&built.frames, &built.transports) {
        io::write_frames(&paths.frames(), frames)?;
        io::write_transports(&paths.transports(), table)?;
    }
    io::write_matrix(&paths.weights_text(), built.weights.csr())?;
    io::write_matrix_binary(&paths.weights_binary(), built.weights.csr())?;
    io::write_vector(&paths.degrees(), &built.raw_degrees)?;
    let meta = BuildMetadata {
        n: built.weights.n(),
        nnz: built.weights.nnz(),
        block_offsets: built.weights.block_offsets().to_vec(),
        base_edges: built.base_edges,
        alpha: cfg.alpha,
        variant: LaplacianVariant::Symmetric,
        mode: cfg.mode,
        frame_dim: built.frames.as_ref().map(|f| f.dim),
    };
    io::write_json(&paths.build_meta(), &meta)?;
    record_timing(&paths, "build", started)?;
    Ok(meta)
}

/// `W_α` as persisted by [`cmd_build`].
pub fn load_weights(paths: &RunPaths) -> Result<BlockSparseMatrix> {
    let meta: BuildMetadata = io::read_json(&paths.build_meta())?;
    BlockSparseMatrix::new(io::read_matrix_binary(&paths.weights_binary())?, meta.block_offsets)
}

pub fn cmd_eig(cfg: &RunConfig) -> Result<(SpectralResult, ClusterReport)> {
    let started = Instant::now();
    let paths = prepare(cfg)?;
    let (spec, clusters) = solve_spectrum(cfg, load_weights(&paths)?)?;
    io::write_eigenvalues(&paths.eigenvalues(), &spec.eigenvalues, &spec.residuals)?;
    io::write_spectrum(&paths.spectrum(), &spec)?;
    io::write_json(&paths.clusters(), &clusters)?;
    let title = format!(
        "smallest {} eigenvalues, eps = {}, delta = {}",
        spec.len(),
        cfg.eps,
        cfg.delta
    );
    std::fs::write(
        paths.eigen_plot(),
        svg::eigenvalue_bars(&spec.eigenvalues, &clusters.bounds, &title),
    )?;
    record_timing(&paths, "eig", started)?;
    Ok((spec, clusters))
}

pub fn cmd_embed(cfg: &RunConfig) -> Result<EmbeddingCoordinates> {
    let started = Instant::now();
    let paths = prepare(cfg)?;
    let spec = io::read_spectrum(&paths.spectrum())?;
    let coords = hdm_embed(&spec, cfg.t, cfg.convention)?;
    let normalized = hdm_normalize(&coords)?;
    io::write_hdm_csv(&paths.hdm(), &coords)?;
    io::write_hdm_csv(&paths.hdm_normalized(), &normalized)?;
    io::write_hbdm_csv(&paths.hbdm(), &hbdm_embed(&spec, cfg.t)?)?;
    record_timing(&paths, "embed", started)?;
    Ok(normalized)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AfapSummary {
    pub anchor: (usize, usize),
    pub fibres: usize,
    pub skipped: usize,
    /// Mean angle error over fibres within geodesic distance 0.3 of the anchor.
    pub near_mean_angle: Option<f64>,
    /// Mean angle error over fibres farther than 2.0 from the anchor.
    pub far_mean_angle: Option<f64>,
}

/// Per-fibre angle errors, `NaN` for fibres without exact transport.
pub fn angle_column(report: &AngleReport, fibres: usize) -> Vec<f64> {
    let mut angles = vec![f64::NAN; fibres];
    for e in &report.entries {
        angles[e.fibre] = e.angle;
    }
    angles
}

pub fn cmd_afap(cfg: &RunConfig) -> Result<(DiscreteSection, AngleReport)> {
    let started = Instant::now();
    let paths = prepare(cfg)?;
    let (rows, block_offsets) = io::read_hdm_csv(&paths.hdm_normalized())?;
    let coords = EmbeddingCoordinates {
        rows,
        convention: cfg.convention,
        t: cfg.t,
        block_offsets,
    };
    let samples = io::read_bundle(&paths.bundle())?;
    let anchor = (cfg.anchor_fibre, cfg.anchor_sample);
    let section = extract_section(&coords, &samples, anchor)?;
    let report = section_angle_report(&section);
    io::write_section(&paths.section(), &section, &angle_column(&report, samples.n_base()))?;
    let view = *section.vectors[anchor.0].base().coords();
    std::fs::write(paths.section_plot(), svg::section_quiver(&section.vectors, view, 0.08))?;
    io::write_json(
        &paths.afap_summary(),
        &AfapSummary {
            anchor,
            fibres: samples.n_base(),
            skipped: report.skipped.len(),
            near_mean_angle: report.mean_angle(|d| d <= 0.3),
            far_mean_angle: report.mean_angle(|d| d > 2.0),
        },
    )?;
    record_timing(&paths, "afap", started)?;
    Ok((section, report))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatrixStats {
    /// Matrix dimension, the total number of bundle samples.
    pub kappa: usize,
    pub nnz: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: RunConfig,
    pub eigenvalues: Vec<f64>,
    pub residuals: Vec<f64>,
    pub clusters: ClusterReport,
    pub matrix: MatrixStats,
    /// Seconds per completed stage.
    pub timings: BTreeMap<String, f64>,
}

pub fn cmd_report(cfg: &RunConfig) -> Result<RunReport> {
    let paths = RunPaths::new(&cfg.out_dir);
    let required = [paths.build_meta(), paths.eigenvalues(), paths.clusters()];
    if let Some(missing) = required.iter().find(|p| !p.exists()) {
        return Err(HdmError::MissingArtifact(missing.clone()));
    }
    let meta: BuildMetadata = io::read_json(&paths.build_meta())?;
    let (eigenvalues, residuals) = io::read_eigenvalues(&paths.eigenvalues())?;
    let mut timings = BTreeMap::new();
    for stage in ["sample", "build", "eig", "embed", "afap"] {
        let p = paths.timing(stage);
        if p.exists() {
            let t: StageTiming = io::read_json(&p)?;
            timings.insert(t.stage, t.seconds);
        }
    }
    let report = RunReport {
        config: cfg.clone(),
        eigenvalues,
        residuals,
        clusters: io::read_json(&paths.clusters())?,
        matrix: MatrixStats {
            kappa: meta.n,
            nnz: meta.nnz,
        },
        timings,
    };
    io::write_json(&paths.report(), &report)?;
    Ok(report)
}

/// Runs every stage in order.
pub fn run_all(cfg: &RunConfig) -> Result<RunReport> {
    cmd_sample(cfg)?;
    cmd_build(cfg)?;
    cmd_eig(cfg)?;
    cmd_embed(cfg)?;
    cmd_afap(cfg)?;
    cmd_report(cfg)
}
