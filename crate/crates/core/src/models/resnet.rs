use crate::nn::{Graph, GraphBuilder, NodeId};
use crate::num::Scalar;

/// ResNet-50: 7x7 stem, four bottleneck stages of [3, 4, 6, 3] blocks with
/// expansion 4, single-logit head on the pooled 2048-wide feature map.
pub fn resnet50<F: Scalar>() -> Graph<F> {
    let (mut b, x) = GraphBuilder::new(3);
    let stem = b.conv2d("stem.conv", x, 3, 64, 7, 2, 3, 1, false);
    let stem = b.batch_norm("stem.bn", stem, 64);
    let stem = b.relu(stem);
    let mut cur = b.max_pool(stem, 3, 2, 1);

    let stages: [(usize, usize, usize); 4] =
        [(64, 3, 1), (128, 4, 2), (256, 6, 2), (512, 3, 2)];
    let mut in_ch = 64;
    for (si, (width, blocks, stage_stride)) in stages.into_iter().enumerate() {
        for bi in 0..blocks {
            let stride = if bi == 0 { stage_stride } else { 1 };
            let out_ch = width * 4;
            let name = format!("layer{}.{}", si + 1, bi);
            cur = bottleneck(&mut b, &name, cur, in_ch, width, out_ch, stride);
            in_ch = out_ch;
        }
    }

    let last_conv = cur;
    let pooled = b.global_avg_pool(last_conv);
    let logit = b.linear("head", pooled, 2048, 1, true);
    b.finish(logit, last_conv)
}

fn bottleneck<F: Scalar>(
    b: &mut GraphBuilder<F>,
    name: &str,
    x: NodeId,
    in_ch: usize,
    width: usize,
    out_ch: usize,
    stride: usize,
) -> NodeId {
    let y = b.conv2d(&format!("{name}.conv1"), x, in_ch, width, 1, 1, 0, 1, false);
    let y = b.batch_norm(&format!("{name}.bn1"), y, width);
    let y = b.relu(y);
    let y = b.conv2d(&format!("{name}.conv2"), y, width, width, 3, stride, 1, 1, false);
    let y = b.batch_norm(&format!("{name}.bn2"), y, width);
    let y = b.relu(y);
    let y = b.conv2d(&format!("{name}.conv3"), y, width, out_ch, 1, 1, 0, 1, false);
    let y = b.batch_norm(&format!("{name}.bn3"), y, out_ch);

    let shortcut = if in_ch != out_ch || stride != 1 {
        let s = b.conv2d(
            &format!("{name}.downsample.conv"),
            x,
            in_ch,
            out_ch,
            1,
            stride,
            0,
            1,
            false,
        );
        b.batch_norm(&format!("{name}.downsample.bn"), s, out_ch)
    } else {
        x
    };
    let sum = b.add(y, shortcut);
    b.relu(sum)
}
