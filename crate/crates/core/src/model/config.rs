use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture variant used by the ablation harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Temporal concatenation `[image, video + camera, action]`, action noised jointly.
    #[default]
    Full,
    /// Action concatenated clean, loss on video only, single-branch guidance.
    NoJointModeling,
    /// Action stacked along channels instead of time.
    ChannelConcat,
    /// Camera features omitted.
    NoCameraAdapter,
    /// Null action at train and test time.
    NoAction,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Full,
        Variant::NoJointModeling,
        Variant::ChannelConcat,
        Variant::NoCameraAdapter,
        Variant::NoAction,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoJointModeling => "no_joint_modeling",
            Variant::ChannelConcat => "channel_concat",
            Variant::NoCameraAdapter => "no_camera_adapter",
            Variant::NoAction => "no_action",
        }
    }

    pub fn parse(s: &str) -> Result<Variant> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown variant `{s}`")))
    }

    pub fn uses_camera(&self) -> bool {
        *self != Variant::NoCameraAdapter
    }

    /// Whether the action condition is ever given to the network.
    pub fn has_action(&self) -> bool {
        *self != Variant::NoAction
    }

    /// Whether action latents are noised and denoised with the video.
    pub fn joint_action(&self) -> bool {
        matches!(
            self,
            Variant::Full | Variant::ChannelConcat | Variant::NoCameraAdapter
        )
    }
}

/// What the output layer parametrizes. The returned value is always a
/// velocity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Prediction {
    /// The head outputs the velocity directly.
    #[default]
    Velocity,
    /// The head outputs a clean-latent estimate `f`, and the velocity is
    /// `(x_t - f) / max(t, CLEAN_T_MIN)`.
    Clean,
}

/// Floor on `t` when converting a clean estimate to a velocity.
pub const CLEAN_T_MIN: f64 = 0.05;

/// User-facing architecture and dropout settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArchConfig {
    pub embed_dim: usize,
    pub heads: usize,
    pub depth: usize,
    /// Spatial patch of latent pixels per token.
    pub token_patch: usize,
    pub mlp_ratio: usize,
    pub p_text: f64,
    pub p_action: f64,
    pub max_tokens: usize,
    pub variant: Variant,
    pub prediction: Prediction,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig {
            embed_dim: 192,
            heads: 6,
            depth: 6,
            token_patch: 1,
            mlp_ratio: 4,
            p_text: 0.1,
            p_action: 0.1,
            max_tokens: 16384,
            variant: Variant::Full,
            prediction: Prediction::Velocity,
        }
    }
}

/// Latent geometry the network is built for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Geometry {
    /// Latent channels `C` of one stream.
    pub channels: usize,
    /// Latent frames `L'` of the video and action streams.
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    /// Number of text templates; the null text gets one extra row.
    pub vocab: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub arch: ArchConfig,
    pub geometry: Geometry,
}

impl ArchConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("model: {m}")));
        if self.embed_dim == 0 || self.heads == 0 || self.embed_dim % self.heads != 0 {
            return bad(format!(
                "embed_dim {} must be a positive multiple of heads {}",
                self.embed_dim, self.heads
            ));
        }
        if self.embed_dim % 2 != 0 {
            return bad("embed_dim must be even".into());
        }
        if self.depth == 0 || self.token_patch == 0 || self.mlp_ratio == 0 {
            return bad("depth, token_patch and mlp_ratio must be positive".into());
        }
        for (name, p) in [("p_text", self.p_text), ("p_action", self.p_action)] {
            if !(0.0..=0.5).contains(&p) {
                return bad(format!("{name} = {p} outside [0, 0.5]"));
            }
        }
        Ok(())
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        let g = &self.geometry;
        let tp = self.arch.token_patch;
        if g.channels == 0 || g.frames == 0 || g.vocab == 0 {
            return Err(Error::Config("model: empty geometry".into()));
        }
        if g.height % tp != 0 || g.width % tp != 0 {
            return Err(Error::Config(format!(
                "model: latent {}x{} not divisible by token_patch {tp}",
                g.height, g.width
            )));
        }
        if self.tokens() > self.arch.max_tokens {
            return Err(Error::Config(format!(
                "model: {} tokens exceed max_tokens {}",
                self.tokens(),
                self.arch.max_tokens
            )));
        }
        Ok(())
    }

    pub fn variant(&self) -> Variant {
        self.arch.variant
    }

    /// Channels of the joint latent.
    pub fn joint_channels(&self) -> usize {
        match self.variant() {
            Variant::ChannelConcat => 2 * self.geometry.channels,
            _ => self.geometry.channels,
        }
    }

    /// Frames of the joint latent.
    pub fn joint_frames(&self) -> usize {
        match self.variant() {
            Variant::ChannelConcat => self.geometry.frames + 1,
            _ => 2 * self.geometry.frames + 1,
        }
    }

    pub fn spatial_tokens(&self) -> usize {
        let tp = self.arch.token_patch;
        (self.geometry.height / tp) * (self.geometry.width / tp)
    }

    pub fn tokens(&self) -> usize {
        self.joint_frames() * self.spatial_tokens()
    }

    /// Features per token.
    pub fn token_dim(&self) -> usize {
        self.joint_channels() * self.arch.token_patch * self.arch.token_patch
    }
}
