"""puremix: mine single-event audio segments and synthesize labeled mixtures.

The package is organized as a batch pipeline:

- :mod:`puremix.ontology` — label taxonomy loading and refinement
- :mod:`puremix.segmenter` — fixed-window slicing with an energy gate
- :mod:`puremix.aligner` — annotation cascade keeping single-event segments
- :mod:`puremix.standardizer` — sample-rate standardization
- :mod:`puremix.mixer` — recipe sampling and SNR-controlled rendering
- :mod:`puremix.evalkit` — signal metrics and listening-test statistics
- :mod:`puremix.pipeline` / :mod:`puremix.cli` — stage orchestration
"""

__version__ = "0.1.0"
