"""Fusion modules, toy twin encoder and detection head."""

from .config import NetworkConfig
from .modules import (
    cddq_forward,
    cddq_vjp,
    cwda_forward,
    cwda_vjp,
    mcp_forward,
    mcp_vjp,
    msp_forward,
    msp_vjp,
    pi_forward,
    pi_vjp,
    sdmd_forward,
    sdmd_vjp,
)
from .network import backbone_forward, backbone_vjp, detect, head_decode, network_forward, network_vjp, nms
from .weights import (
    CddqWeights,
    McpWeights,
    MspWeights,
    NetworkWeights,
    PiWeights,
    init_weights,
    load_weights,
    named_arrays,
    save_weights,
)
