"""Hand-built five-packet, two-link scenario with known allocations.

Unit time: every PHY duration is 1, so a success lasts 10 and a collision
5. Link 1 is busy over [0, 20) and link 2 over [5, 25). Backoff draws are
fixed in consumption order.

Expected story:
  #1 (t=1) contends on both links (link 1 frozen by the busy period).
  #2 (t=3) pins #1 to link 2, whose backoff expires first (t=32 vs t=25+...),
     cancels #1 on link 1 and starts its own backoff there.
  #3 (t=26) finds both links serving and waits in the buffer until link 1
     frees at t=30.
  #4 (t=50) finds both links idle and contends on both.
  #5 (t=51) pins #4 to link 1 (closest expiry), cancels its link-2 instance
     and starts a fresh backoff on link 2; both transmit at t=53.
"""

import numpy as np

from mlo_delay.analytic import Scenario
from mlo_delay.phy import PhyMacParams
from mlo_delay.simulator import SimConfig, run
from mlo_delay.traffic import Arrivals

UNIT = PhyMacParams(sigma=1, sifs=1, difs=1, t_rts=1, t_cts=1, t_ack=1, phy_preamble=1,
                    data_rate=1, packet_bits=1)
ARRIVALS = (1.0, 3.0, 26.0, 50.0, 51.0)
BUSY = ((0, 0.0, 20.0), (1, 5.0, 20.0))
DRAWS = (5, 12, 0, 4, 3, 9, 2)

EXPECTED = """\
0.000000,1,BUSY,-
1.000000,-,ARRIVE,1
1.000000,1,BACKOFF,1
1.000000,2,BACKOFF,1
3.000000,-,ARRIVE,2
3.000000,2,ALLOCATE,1
3.000000,1,CANCEL,1
3.000000,1,BACKOFF,2
5.000000,2,BUSY,-
20.000000,1,ALLOCATE,2
20.000000,1,TX,2
26.000000,-,ARRIVE,3
26.000000,-,QUEUE,3
30.000000,1,DEPART,2
30.000000,1,ALLOCATE,3
30.000000,1,BACKOFF,3
32.000000,2,TX,1
34.000000,1,TX,3
42.000000,2,DEPART,1
44.000000,1,DEPART,3
50.000000,-,ARRIVE,4
50.000000,1,BACKOFF,4
50.000000,2,BACKOFF,4
51.000000,-,ARRIVE,5
51.000000,1,ALLOCATE,4
51.000000,2,CANCEL,4
51.000000,2,BACKOFF,5
53.000000,1,TX,4
53.000000,2,ALLOCATE,5
53.000000,2,TX,5
63.000000,1,DEPART,4
63.000000,2,DEPART,5"""


def run_script():
    arrivals = Arrivals(np.array(ARRIVALS), np.ones(len(ARRIVALS), np.int64))
    cfg = SimConfig(duration=100.0, warmup=0.0, trace=True, check_invariants=True)
    return run(Scenario(2, 0.05), UNIT, cfg=cfg, arrivals=arrivals,
               script_busy=BUSY, script_draws=DRAWS)
