use crate::nn::{Graph, GraphBuilder, NodeId};
use crate::num::Scalar;

/// (expansion, output channels, repeats, first stride, kernel size).
const STAGES: [(usize, usize, usize, usize, usize); 7] = [
    (1, 16, 1, 1, 3),
    (6, 24, 2, 2, 3),
    (6, 40, 2, 2, 5),
    (6, 80, 3, 2, 3),
    (6, 112, 3, 1, 5),
    (6, 192, 4, 2, 5),
    (6, 320, 1, 1, 3),
];

/// EfficientNet-B0: MBConv blocks with depthwise convolutions and
/// squeeze-excitation, SiLU activations, 1280-channel head feature map.
pub fn efficientnet_b0<F: Scalar>() -> Graph<F> {
    let (mut b, x) = GraphBuilder::new(3);
    let stem = b.conv2d("stem.conv", x, 3, 32, 3, 2, 1, 1, false);
    let stem = b.batch_norm("stem.bn", stem, 32);
    let mut cur = b.silu(stem);

    let mut in_ch = 32usize;
    for (si, (expand, out_ch, repeats, stride, k)) in STAGES.into_iter().enumerate() {
        for ri in 0..repeats {
            let s = if ri == 0 { stride } else { 1 };
            let name = format!("stage{}.block{}", si + 1, ri);
            cur = mbconv(&mut b, &name, cur, in_ch, out_ch, expand, s, k);
            in_ch = out_ch;
        }
    }

    let head = b.conv2d("head.conv", cur, in_ch, 1280, 1, 1, 0, 1, false);
    let head = b.batch_norm("head.bn", head, 1280);
    let last_conv = b.silu(head);
    let pooled = b.global_avg_pool(last_conv);
    let logit = b.linear("head.fc", pooled, 1280, 1, true);
    b.finish(logit, last_conv)
}

#[allow(clippy::too_many_arguments)]
fn mbconv<F: Scalar>(
    b: &mut GraphBuilder<F>,
    name: &str,
    x: NodeId,
    in_ch: usize,
    out_ch: usize,
    expand: usize,
    stride: usize,
    k: usize,
) -> NodeId {
    let mid = in_ch * expand;
    let mut h = x;
    if expand != 1 {
        h = b.conv2d(&format!("{name}.expand.conv"), h, in_ch, mid, 1, 1, 0, 1, false);
        h = b.batch_norm(&format!("{name}.expand.bn"), h, mid);
        h = b.silu(h);
    }
    h = b.conv2d(
        &format!("{name}.depthwise.conv"),
        h,
        mid,
        mid,
        k,
        stride,
        k / 2,
        mid,
        false,
    );
    h = b.batch_norm(&format!("{name}.depthwise.bn"), h, mid);
    h = b.silu(h);

    // Squeeze-excitation, reduction keyed to the block's input channels.
    let se_ch = (in_ch / 4).max(1);
    let squeezed = b.global_avg_pool(h);
    let se = b.linear(&format!("{name}.se.reduce"), squeezed, mid, se_ch, true);
    let se = b.silu(se);
    let se = b.linear(&format!("{name}.se.expand"), se, se_ch, mid, true);
    let gate = b.sigmoid(se);
    h = b.scale_channels(h, gate);

    h = b.conv2d(&format!("{name}.project.conv"), h, mid, out_ch, 1, 1, 0, 1, false);
    h = b.batch_norm(&format!("{name}.project.bn"), h, out_ch);
    if stride == 1 && in_ch == out_ch {
        h = b.add(h, x);
    }
    h
}
