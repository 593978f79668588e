import torch
import torch.nn as nn
import torch.nn.functional as F


def _block(in_channels: int, out_channels: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(in_channels, out_channels, kernel_size=3, stride=2, padding=1),
        nn.GroupNorm(min(8, out_channels), out_channels),
        nn.ReLU(inplace=True),
    )


class TinyVisionEncoder(nn.Module):
    """Four strided conv blocks, global average pooling, linear head, L2 norm"""

    def __init__(self, embed_dim: int = 256, width: int = 32):
        super(TinyVisionEncoder, self).__init__()
        self.arch = dict(embed_dim=embed_dim, width=width)
        self.features = nn.Sequential(
            _block(3, width),
            _block(width, 2 * width),
            _block(2 * width, 2 * width),
            _block(2 * width, 4 * width),
            nn.AdaptiveAvgPool2d(1),
            nn.Flatten(),
        )
        self.projection = nn.Linear(4 * width, embed_dim)

    @property
    def dim(self) -> int:
        return self.projection.out_features

    def forward(self, pixels: torch.Tensor) -> torch.Tensor:
        return F.normalize(self.projection(self.features(pixels)), dim=-1)
