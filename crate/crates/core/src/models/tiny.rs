use crate::nn::{Graph, GraphBuilder};
use crate::num::Scalar;

/// conv(1->4,3x3) + conv(4->8,3x3) + linear(8->1), 345 parameters. Global
/// average pooling makes the head independent of the input resolution.
pub fn tiny_conv<F: Scalar>() -> Graph<F> {
    let (mut b, x) = GraphBuilder::new(1);
    let c1 = b.conv2d("conv1", x, 1, 4, 3, 1, 1, 1, true);
    let r1 = b.relu(c1);
    let c2 = b.conv2d("conv2", r1, 4, 8, 3, 1, 1, 1, true);
    let last_conv = b.relu(c2);
    let pooled = b.global_avg_pool(last_conv);
    let logit = b.linear("head", pooled, 8, 1, true);
    b.finish(logit, last_conv)
}
