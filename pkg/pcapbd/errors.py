'''
Exceptions raised by pcapbd. Everything deriving from PcapbdError is a domain
error and maps to exit code 1 on the command line.
'''


class PcapbdError(Exception):
    pass


class PcapFormatError(PcapbdError):
    pass


class PcapTruncationError(PcapbdError):

    def __init__(self, record_index, message=""):
        self.record_index = record_index
        super().__init__(f"record {record_index} is truncated{': ' + message if message else ''}")


class SnapLengthError(PcapbdError):

    def __init__(self, packet_index, length, snap_len):
        self.packet_index = packet_index
        super().__init__(f"packet {packet_index} is {length} bytes, longer than snap_len {snap_len}")


class ContractError(PcapbdError):
    pass


class OrderingError(PcapbdError):
    pass


class TrainingDivergedError(PcapbdError):

    def __init__(self, epoch, batch, loss):
        self.epoch = epoch
        self.batch = batch
        super().__init__(f"non-finite loss {loss} in epoch {epoch}, batch {batch}")


class InsufficientPoisonError(PcapbdError):

    def __init__(self, requested, achievable):
        self.requested = requested
        self.achievable = achievable
        super().__init__(
            f"not enough poisoned rows for {requested}% of the training set, "
            f"achievable maximum is {achievable:.3f}%")


class AnalysisRefusedError(PcapbdError):
    pass
