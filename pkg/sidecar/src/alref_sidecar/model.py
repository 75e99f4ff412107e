"""Dual-backbone semantic segmentation network for 5-band imagery.

Two ResNet-50 backbones split the spectral bands: the first sees (red,
green, blue), the second (red-edge, near-infrared, mean of red/green/blue).
Each backbone contributes its four residual-stage outputs.

Decoder choice (the aggregation path is not fully pinned down upstream):
every stage output is reduced to a fixed channel count by a 1x1
convolution, bilinearly upsampled to the input size, concatenated across
both backbones, and fused by a 3x3 convolution with batch normalisation
and ReLU before the final 1x1 classification convolution. Output spatial
size equals input spatial size, one channel per class.
"""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F
from torchvision.models import resnet50

# Expected band order of the incoming rasters.
BAND_BLUE, BAND_GREEN, BAND_RED, BAND_REDEDGE, BAND_NIR = range(5)
_STAGE_CHANNELS = (256, 512, 1024, 2048)
_REDUCED_CHANNELS = 32


class _Backbone(nn.Module):
    """ResNet-50 trunk returning the four residual-stage feature maps."""

    def __init__(self, pretrained: bool = False):
        super().__init__()
        weights = "IMAGENET1K_V2" if pretrained else None
        net = resnet50(weights=weights)
        self.stem = nn.Sequential(net.conv1, net.bn1, net.relu, net.maxpool)
        self.stages = nn.ModuleList([net.layer1, net.layer2, net.layer3, net.layer4])

    def forward(self, x: torch.Tensor) -> list[torch.Tensor]:
        x = self.stem(x)
        outputs = []
        for stage in self.stages:
            x = stage(x)
            outputs.append(x)
        return outputs


class DualBackboneSegmenter(nn.Module):
    def __init__(self, num_classes: int = 4, pretrained: bool = False):
        super().__init__()
        self.num_classes = num_classes
        self.backbone_rgb = _Backbone(pretrained)
        self.backbone_ir = _Backbone(pretrained)
        # one reducer per tap, ordered as forward() concatenates: all four
        # rgb-backbone stages, then all four ir-backbone stages
        self.reducers = nn.ModuleList([
            nn.Conv2d(c, _REDUCED_CHANNELS, kernel_size=1)
            for c in list(_STAGE_CHANNELS) * 2
        ])
        fused = 8 * _REDUCED_CHANNELS
        self.fuse = nn.Sequential(
            nn.Conv2d(fused, fused, kernel_size=3, padding=1),
            nn.BatchNorm2d(fused),
            nn.ReLU(inplace=True),
        )
        self.classify = nn.Conv2d(fused, num_classes, kernel_size=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[1] != 5:
            raise ValueError(f"expected 5 bands, got {x.shape[1]}")
        size = x.shape[2:]
        rgb = x[:, (BAND_RED, BAND_GREEN, BAND_BLUE)]
        mean_rgb = rgb.mean(dim=1, keepdim=True)
        ir = torch.cat([x[:, (BAND_REDEDGE, BAND_NIR)], mean_rgb], dim=1)

        taps = self.backbone_rgb(rgb) + self.backbone_ir(ir)
        reduced = [
            F.interpolate(reducer(tap), size=size, mode="bilinear", align_corners=False)
            for reducer, tap in zip(self.reducers, taps)
        ]
        fused = self.fuse(torch.cat(reduced, dim=1))
        return self.classify(fused)  # logits, (N, num_classes, *size)
