//! Parameters and forward pass of the full autoencoder.

mod context;

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use context::{GraphContext, MessageGraph};

use crate::encoder::{self, EncoderParameters};
use crate::error::{Error, Result};
use crate::heads::{self, HeadParameters};
use crate::tensor::{
    read_checkpoint, write_checkpoint, BoundParams, ParamStore, Tape, Tensor, Var,
};
use crate::tgd::{self, DecoderParameters, EdgePredictionSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub dim: usize,
    pub heads: usize,
    pub layers: usize,
    pub dropout: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            dim: 64,
            heads: 8,
            layers: 3,
            dropout: 0.5,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.heads == 0 || !self.dim.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "dim {} must be a positive multiple of heads {}",
                self.dim, self.heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout {} must lie in [0, 1)",
                self.dropout
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub encoder: EncoderParameters,
    pub decoder: DecoderParameters,
    pub heads: HeadParameters,
}

/// Intermediate values of one forward pass.
pub struct Forward {
    pub bound: BoundParams,
    pub h_s: Var,
    pub z: Var,
    pub attention: Vec<Var>,
    pub z_prime: Vec<Option<Var>>,
    /// HGC logits for every target-type node, in type-local order.
    pub hgc: Var,
    /// FBC logits for every target-type node, in type-local order.
    pub fbc: Var,
}

impl Model {
    /// Fresh parameters; identical `seed` and shapes give identical values.
    pub fn init(ctx: &GraphContext, config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let encoder = EncoderParameters::init(
            &mut store,
            &mut rng,
            &ctx.feature_dims(),
            ctx.num_edge_types,
            config.dim,
            config.heads,
            config.layers,
        )?;
        let decoder = DecoderParameters::init(
            &mut store,
            &mut rng,
            ctx.type_ranges.len(),
            &ctx.decoder_types(),
            config.dim,
        );
        let heads = HeadParameters::init(&mut store, &mut rng, config.dim, ctx.num_classes);
        Ok(Model {
            config: config.clone(),
            store,
            encoder,
            decoder,
            heads,
        })
    }

    /// Runs the encoder, decoder MLPs and both heads. Dropout is active only
    /// when `rng` is given.
    pub fn forward(
        &self,
        tape: &mut Tape,
        ctx: &GraphContext,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Forward> {
        let bound = self.store.bind(tape);
        self.forward_bound(tape, bound, ctx, rng)
    }

    /// [`Model::forward`] with parameters already placed on the tape.
    pub fn forward_bound(
        &self,
        tape: &mut Tape,
        bound: BoundParams,
        ctx: &GraphContext,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Forward> {
        let h_s = encoder::project_features(tape, &bound, &self.encoder, ctx)?;
        let enc = encoder::encode(
            tape,
            &bound,
            &self.encoder,
            &ctx.message,
            h_s,
            self.config.dropout,
            rng,
        )?;
        let z_prime = tgd::type_transform(tape, &bound, &self.decoder, ctx, enc.z)?;
        let r = &ctx.type_ranges[ctx.target_type];
        let z_t = tape.slice_rows(enc.z, r.start, r.end)?;
        let hgc = heads::hgc_logits(tape, &bound, &self.heads, z_t)?;
        let h_t = tape.slice_rows(h_s, r.start, r.end)?;
        let fbc = heads::fbc_logits(tape, &bound, &self.heads, h_t)?;
        Ok(Forward {
            bound,
            h_s,
            z: enc.z,
            attention: enc.attention,
            z_prime,
            hgc,
            fbc,
        })
    }

    /// Probabilities for every legal pair of `ctx.pairs`, without dropout.
    pub fn predict_edges(&self, ctx: &GraphContext) -> Result<EdgePredictionSet> {
        let mut tape = Tape::no_grad();
        let f = self.forward(&mut tape, ctx, None)?;
        let zp: Vec<Option<Tensor>> = f
            .z_prime
            .iter()
            .map(|v| v.map(|v| tape.value(v).clone()))
            .collect();
        EdgePredictionSet::from_embeddings(&ctx.pairs, &zp)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        write_checkpoint(&mut w, self.store.entries())?;
        use std::io::Write;
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Builds the architecture for `ctx` and fills it from a checkpoint.
    pub fn load(path: impl AsRef<Path>, ctx: &GraphContext, config: &ModelConfig) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let entries = read_checkpoint(&mut BufReader::new(file))?;
        let mut model = Model::init(ctx, config, 0)?;
        model.store.load_from(entries)?;
        Ok(model)
    }
}
