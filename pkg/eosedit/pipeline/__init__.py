""" Imports the eosedit pipeline """

from .run_config import RunConfig
from .outputs import StagedOutputs, SweepRow, image_grid, sweep_csv, sweep_dataset
from .pipeline import Pipeline, CompareReport, BaselineReport, SweepReport, TokenizeReport
from .pipeline import PairRecord, CommandRecord, GenerateReport
