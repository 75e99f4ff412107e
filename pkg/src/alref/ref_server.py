"""Reference protocol-v1 server wrapping the in-process baseline predictor.

Run with ``python -m alref.ref_server``. Exists so the loop's remote path
can be tested without any external model host: driving the loop through
this server must reproduce the in-process records exactly.
"""

from __future__ import annotations

import numpy as np

from . import predictor
from .protocol import run_server
from .raster import LabelRaster, MultiBandRaster


class _State:
    model = None


def main() -> None:
    state = _State()

    def handle_train(images, labels, config):
        cfg_fields = dict(config)
        num_classes = int(cfg_fields.pop("num_classes", 4))
        pcfg = predictor.PredictorConfig.from_dict(cfg_fields)
        imgs = [MultiBandRaster(a) for a in images]
        labs = [LabelRaster(a, num_classes) for a in labels]
        prev = state.model if pcfg.warm_start else None
        state.model = predictor.train(imgs, labs, pcfg, model=prev)

    def handle_predict(image):
        if state.model is None:
            raise RuntimeError("not trained")
        pm = predictor.predict_proba(state.model, MultiBandRaster(image))
        return pm.probs.astype(np.float32)

    run_server(handle_train, handle_predict)


if __name__ == "__main__":
    main()
