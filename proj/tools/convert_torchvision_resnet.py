#!/usr/bin/env python3
"""Convert torchvision ResNet / Mask R-CNN weights into a slidemask checkpoint.

Only the ResNet body is kept (stem and layer1..layer4). FPN, RPN and ROI head
tensors have a different layout in slidemask and are left out; load_pretrained
reinitializes them. Usage:

    convert_torchvision_resnet.py maskrcnn_resnet50_fpn_coco.pth coco_r50.ckpt
    convert_torchvision_resnet.py --arch resnet101 --random out.ckpt
"""

import argparse
import json
import struct
import sys

import numpy as np

PREFIX = "backbone.body."


def body_tensors(state):
    """Maps a state dict to {slidemask name: float32 array}."""
    detection = any(k.startswith(PREFIX) for k in state)
    out = {}
    for key, value in state.items():
        if detection:
            if not key.startswith(PREFIX):
                continue
            local = key[len(PREFIX):]
        else:
            local = key
        if local.startswith("fc.") or local.endswith("num_batches_tracked"):
            continue
        if not (local.startswith("conv1.") or local.startswith("bn1.") or local.startswith("layer")):
            continue
        arr = value.detach().cpu().numpy() if hasattr(value, "detach") else np.asarray(value)
        out[PREFIX + local] = np.ascontiguousarray(arr, dtype="<f4")
    if not out:
        raise SystemExit("no ResNet body tensors found")
    return out


def depth_of(tensors):
    blocks = {k.split(".")[3] for k in tensors if k.startswith(PREFIX + "layer3.")}
    return {6: 50, 23: 101}.get(len(blocks), 0)


def write_checkpoint(tensors, path, metadata):
    with open(path, "wb") as f:
        f.write(b"SMCK")
        f.write(struct.pack("<I", 1))
        meta = json.dumps(metadata, separators=(",", ":")).encode()
        f.write(struct.pack("<I", len(meta)))
        f.write(meta)
        f.write(struct.pack("<I", len(tensors)))
        for name in sorted(tensors):
            arr = tensors[name]
            raw = name.encode()
            f.write(struct.pack("<I", len(raw)))
            f.write(raw)
            f.write(struct.pack("<I", arr.ndim))
            f.write(struct.pack("<%di" % arr.ndim, *arr.shape))
            f.write(arr.tobytes())


def load_state(path):
    import torch

    obj = torch.load(path, map_location="cpu", weights_only=True)
    for key in ("model", "state_dict"):
        if isinstance(obj, dict) and key in obj and isinstance(obj[key], dict):
            obj = obj[key]
    return obj


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("input", nargs="?", help="torchvision .pth state dict")
    ap.add_argument("output", help="slidemask checkpoint to write")
    ap.add_argument("--arch", choices=["resnet50", "resnet101"], default="resnet50")
    ap.add_argument("--random", action="store_true", help="export a randomly initialized torchvision model")
    args = ap.parse_args(argv)

    if args.random:
        import torchvision

        state = getattr(torchvision.models, args.arch)(weights=None).state_dict()
        source = "torchvision:%s:random" % args.arch
    elif args.input:
        state = load_state(args.input)
        source = args.input
    else:
        ap.error("an input checkpoint or --random is required")

    tensors = body_tensors(state)
    depth = depth_of(tensors)
    if depth == 0:
        raise SystemExit("cannot tell ResNet-50 from ResNet-101: unexpected layer3 block count")
    meta = {"format": "slidemask.checkpoint", "source": source, "depth": depth,
            "backbone": "resnet%d" % depth, "stages_used": 5}
    write_checkpoint(tensors, args.output, meta)
    print("%s: %d tensors, ResNet-%d" % (args.output, len(tensors), depth))


if __name__ == "__main__":
    sys.exit(main())
