import time


class ThroughputCounter:
    """
    Counts processed samples and reports samples per second.
    """
    def __init__(self, clock=time.perf_counter):
        """
        Args:
            clock: zero-argument callable returning seconds
        """
        self.clock = clock
        self.samples = 0
        self.started = None
        self.elapsed = 0.0

    def start(self):
        self.started = self.clock()
        self.samples = 0
        self.elapsed = 0.0
        return self

    def update(self, count):
        """Add ``count`` processed samples and refresh the elapsed time"""
        if self.started is None:
            self.start()
        self.samples += count
        self.elapsed = self.clock() - self.started

    def stop(self):
        if self.started is not None:
            self.elapsed = self.clock() - self.started
        return self.elapsed

    @property
    def rate(self):
        if self.elapsed <= 0:
            return 0.0
        return self.samples / self.elapsed

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()
        return False
