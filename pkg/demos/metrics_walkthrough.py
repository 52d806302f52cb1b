"""
Scoring terraces and walls
==========================

The challenge score is a foreground IoU: a pixel counts as matched only if
prediction and truth agree *and* both are foreground. The per-class table
reports precision, recall, F1 and IoU for terraces and walls, and mIoU
averages the two foreground IoUs.
"""

import numpy as np

from terrafuse.metrics import confusion, foreground_iou, full_report, iou_from_f1

# %%
# Hand example: one matched terrace, one wall predicted in the wrong place.
pred = np.array([[1, 0], [2, 0]], np.uint8)
truth = np.array([[1, 0], [0, 2]], np.uint8)
print(confusion(pred, truth))  # rows are truth, columns prediction
print("foreground IoU", foreground_iou(pred, truth))  # 1 / 3

# %%
# Swapping the two foreground classes everywhere scores zero, even though
# every foreground pixel is "found".
truth = np.random.default_rng(0).integers(0, 3, (8, 8)).astype(np.uint8)
swapped = np.where(truth == 0, 0, 3 - truth).astype(np.uint8)
print("swapped classes", foreground_iou(swapped, truth))
print(full_report(truth, truth).to_table())

# %%
# F1 and IoU are tied by IoU = F1 / (2 - F1), so a published F1 table
# determines its mIoU column. The values below are the validation F1 scores
# of the U-Net, DeepLabv3+ and fused models in the original study.
for name, (terrace, wall), published in [("U-Net", (.21, .71), .33), ("DeepLabv3+", (.35, .67), .36),
                                         ("Fusion", (.40, .70), .39)]:
    miou = (iou_from_f1(terrace) + iou_from_f1(wall)) / 2
    print(f"{name:11s} mIoU from F1 {miou:.3f}  published {published:.2f}")
