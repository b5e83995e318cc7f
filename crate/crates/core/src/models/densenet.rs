use crate::nn::{Graph, GraphBuilder};
use crate::num::Scalar;

const GROWTH: usize = 32;
const BOTTLENECK: usize = 4;
const BLOCKS: [usize; 4] = [6, 12, 24, 16];

/// DenseNet-121: dense blocks of [6, 12, 24, 16] layers with growth rate 32
/// and 4x bottlenecks, halving transitions, final BN-ReLU feature map of
/// 1024 channels.
pub fn densenet121<F: Scalar>() -> Graph<F> {
    let (mut b, x) = GraphBuilder::new(3);
    let stem = b.conv2d("stem.conv", x, 3, 64, 7, 2, 3, 1, false);
    let stem = b.batch_norm("stem.bn", stem, 64);
    let stem = b.relu(stem);
    let pooled = b.max_pool(stem, 3, 2, 1);

    let mut features = vec![pooled];
    let mut channels = 64usize;

    for (bi, layers) in BLOCKS.into_iter().enumerate() {
        for li in 0..layers {
            let name = format!("block{}.layer{}", bi + 1, li);
            let input = b.concat(features.clone());
            let y = b.batch_norm(&format!("{name}.bn1"), input, channels);
            let y = b.relu(y);
            let mid = BOTTLENECK * GROWTH;
            let y = b.conv2d(&format!("{name}.conv1"), y, channels, mid, 1, 1, 0, 1, false);
            let y = b.batch_norm(&format!("{name}.bn2"), y, mid);
            let y = b.relu(y);
            let y = b.conv2d(&format!("{name}.conv2"), y, mid, GROWTH, 3, 1, 1, 1, false);
            features.push(y);
            channels += GROWTH;
        }
        if bi + 1 < BLOCKS.len() {
            let name = format!("transition{}", bi + 1);
            let input = b.concat(features.clone());
            let y = b.batch_norm(&format!("{name}.bn"), input, channels);
            let y = b.relu(y);
            channels /= 2;
            let y = b.conv2d(&format!("{name}.conv"), y, channels * 2, channels, 1, 1, 0, 1, false);
            let y = b.avg_pool(y, 2, 2);
            features = vec![y];
        }
    }

    let cat = b.concat(features);
    let y = b.batch_norm("final.bn", cat, channels);
    let last_conv = b.relu(y);
    let pooled = b.global_avg_pool(last_conv);
    let logit = b.linear("head", pooled, channels, 1, true);
    b.finish(logit, last_conv)
}
