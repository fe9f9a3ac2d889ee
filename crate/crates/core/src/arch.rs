//! Network shapes shared by the training stages.

use clutterbridge_numcore::{Net, NetBuilder};
use clutterbridge_sim::Image;
use rand::Rng;

use crate::error::Result;
use crate::trajgen::LATENT_DIM;

pub const FEATURE_DIM: usize = 64;
pub const POLICY_HIDDEN: usize = 64;
pub const AUX_HIDDEN: usize = 64;
/// Channels of the last conv layer in the keypoint perception head.
pub const KEYPOINTS: usize = 16;

fn conv_trunk(last_channels: usize) -> NetBuilder {
    NetBuilder::new(&Image::shape())
        .conv(8, 3, 2, 1)
        .relu()
        .conv(16, 3, 2, 1)
        .relu()
        .conv(last_channels, 3, 2, 1)
        .relu()
}

/// Image → 64-dim feature: three stride-2 convs and a dense projection.
pub fn perception<R: Rng>(rng: &mut R) -> Result<Net> {
    Ok(conv_trunk(16).flatten().dense(FEATURE_DIM).build(rng)?)
}

/// Image → 16 expected keypoint coordinates (32 values).
pub fn keypoint_perception<R: Rng>(rng: &mut R) -> Result<Net> {
    Ok(conv_trunk(KEYPOINTS).spatial_softmax().flatten().build(rng)?)
}

/// Feature → latent mean.
pub fn policy<R: Rng>(feature_dim: usize, rng: &mut R) -> Result<Net> {
    Ok(NetBuilder::new(&[feature_dim])
        .dense(POLICY_HIDDEN)
        .relu()
        .dense(POLICY_HIDDEN)
        .relu()
        .dense(LATENT_DIM)
        .build(rng)?)
}

/// Feature → one logit (discriminator, classifier and probe heads).
pub fn logit_head<R: Rng>(feature_dim: usize, hidden_layers: usize, rng: &mut R) -> Result<Net> {
    let mut b = NetBuilder::new(&[feature_dim]);
    for _ in 0..hidden_layers {
        b = b.dense(AUX_HIDDEN).relu();
    }
    Ok(b.dense(1).build(rng)?)
}
