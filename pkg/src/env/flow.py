from collections import deque
from typing import Deque, List, Tuple

# smoothing constant shared by the rate, waiting time and arrival rate averages
STAT_SMOOTHING = 0.05
RATE_FLOOR = 1.0
INITIAL_RATE_FRACTION = 0.01


class FlowState:
    """
    One user's queue: a FIFO of [arrival_slot, bits] chunks plus the smoothed
    statistics the schedulers observe. Bits enqueued at the end of slot t are
    servable from slot t+1 on.
    """

    def __init__(self, cmax: float, tau: float, smoothing: float = STAT_SMOOTHING):
        self.cmax = cmax
        self.tau = tau
        self.smoothing = smoothing
        self.fifo: Deque[List[float]] = deque()
        self.queue_bits = 0.0
        self.avg_rate = INITIAL_RATE_FRACTION * cmax
        self.avg_arrival_rate = INITIAL_RATE_FRACTION * cmax
        self.avg_waiting = 0.0
        self.arrived_bits = 0.0
        self.departed_bits = 0.0

    def hol_delay(self, t: int) -> float:
        if not self.fifo:
            return 0.0
        return (t - self.fifo[0][0]) * self.tau

    def serve(self, assigned_rate: float, t: int) -> Tuple[float, float]:
        """
        Serve min(Q, C*tau) bits FIFO in slot t. Returns (served_bits, waiting_sample) where
        the sample is the delay of the last packet touched, or the HOL delay if nothing was served.
        """
        hol = self.hol_delay(t)
        served = min(self.queue_bits, assigned_rate * self.tau)
        if served <= 0.0:
            return 0.0, hol
        sample = hol
        if served >= self.queue_bits:
            sample = (t - self.fifo[-1][0]) * self.tau
            self.fifo.clear()
        else:
            budget = served
            while budget > 0.0 and self.fifo:
                head = self.fifo[0]
                sample = (t - head[0]) * self.tau
                if head[1] <= budget:
                    budget -= head[1]
                    self.fifo.popleft()
                else:
                    head[1] -= budget
                    budget = 0.0
        self.queue_bits = self.queue_bits - served
        self.departed_bits += served
        return served, sample

    def enqueue(self, bits: float, t: int) -> None:
        if bits > 0.0:
            self.fifo.append([t, bits])
        self.queue_bits = self.queue_bits + bits
        self.arrived_bits += bits

    def update_statistics(self, assigned_rate: float, arrival_bits: float, waiting_sample: float) -> None:
        b = self.smoothing
        self.avg_rate = max(RATE_FLOOR, (1 - b) * self.avg_rate + b * assigned_rate)
        self.avg_arrival_rate = max(RATE_FLOOR, (1 - b) * self.avg_arrival_rate + b * arrival_bits / self.tau)
        self.avg_waiting = (1 - b) * self.avg_waiting + b * waiting_sample

    def fifo_bits(self) -> float:
        return sum(chunk[1] for chunk in self.fifo)
