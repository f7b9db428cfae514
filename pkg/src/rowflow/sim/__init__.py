from .config import ArchConfig
from .engine import (DENSE, SPARSE, CapacityError, LayerStep, SimReport, StepOutputs, compile_step,
                     run_step, simulate)
from .pe import PE, EventTally, exec_msrc, exec_osrc, exec_src
from .ppu import PPU, ppu_process
