import torch

from sksits.core import pad_and_batch
from sksits.datasets import GenConfig, generate_dataset
from sksits.encoders import UTAE, UTAEConfig
from sksits.panoptic import PanopticUTAE


class UTAEForward:
    params = ([12, 36], ["full", "mean_attention", "single_date"])
    param_names = ["n_dates", "ablation"]
    repeat = (1, 3, 20.0)
    processes = 1

    def setup(self, n_dates, ablation):
        torch.manual_seed(0)
        samples = generate_dataset(GenConfig(H=64, W=64, T_range=(n_dates, n_dates)), 4)
        self.images, self.dates, self.pad_mask = pad_and_batch(samples).to_torch("cpu")
        self.model = UTAE(UTAEConfig(ablation=ablation)).eval()

    def time_forward(self, *args):
        with torch.no_grad():
            self.model(self.images, self.dates, self.pad_mask)

    def peakmem_forward(self, *args):
        with torch.no_grad():
            self.model(self.images, self.dates, self.pad_mask)


class PanopticTrainingStep:
    repeat = (1, 3, 30.0)
    processes = 1

    def setup(self):
        torch.manual_seed(0)
        self.samples = generate_dataset(GenConfig(H=64, W=64), 4)
        self.images, self.dates, self.pad_mask = pad_and_batch(self.samples).to_torch("cpu")
        self.model = PanopticUTAE()

    def time_loss_backward(self):
        d = self.model(self.images, self.dates, self.pad_mask)
        self.model.head.loss(d, self.samples).total.backward()
