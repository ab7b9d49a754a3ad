#!/usr/bin/env python3
"""Exports torchvision's pretrained VGG19 convolution weights to the binary
format the objstyle binary loads (point OBJSTYLE_VGG_WEIGHTS at the output).

Usage: python3 tools/export_vgg19_weights.py vgg19.objw
"""

import struct
import sys

CONV_NAMES = [
    "conv1_1", "conv1_2",
    "conv2_1", "conv2_2",
    "conv3_1", "conv3_2", "conv3_3", "conv3_4",
    "conv4_1", "conv4_2", "conv4_3", "conv4_4",
    "conv5_1", "conv5_2", "conv5_3", "conv5_4",
]


def main() -> int:
    if len(sys.argv) != 2:
        print(__doc__.strip(), file=sys.stderr)
        return 2

    import torch
    from torchvision.models import VGG19_Weights, vgg19

    model = vgg19(weights=VGG19_Weights.IMAGENET1K_V1).features.eval()
    convs = [m for m in model if isinstance(m, torch.nn.Conv2d)]
    assert len(convs) == len(CONV_NAMES), f"expected 16 convs, got {len(convs)}"

    with open(sys.argv[1], "wb") as out:
        out.write(b"OBJVGGW1")
        out.write(struct.pack("<i", len(convs)))
        for name, conv in zip(CONV_NAMES, convs):
            w = conv.weight.detach().float().contiguous()
            b = conv.bias.detach().float().contiguous()
            oc, ic, kh, kw = w.shape
            out.write(struct.pack("<i", len(name)))
            out.write(name.encode())
            out.write(struct.pack("<iiii", oc, ic, kh, kw))
            out.write(w.numpy().tobytes())
            out.write(b.numpy().tobytes())
            print(f"wrote {name}: {oc}x{ic}x{kh}x{kw}")
    print(f"done: {sys.argv[1]}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
