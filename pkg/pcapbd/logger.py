'''
Package logger. Library modules only log to the console; the command line
interface attaches the pipeline log file.
'''
import logging
import os

from pcapbd.config import FILEPATH_LOG_PIPELINE

FORMAT_LOG = '%(asctime)s\t[ %(levelname)s ]\t%(message)s'

logger = logging.getLogger('pcapbd')
logger.setLevel(logging.INFO)
ch = logging.StreamHandler()
ch.setLevel(logging.INFO)
formatter = logging.Formatter(FORMAT_LOG)
ch.setFormatter(formatter)
logger.addHandler(ch)

info = logger.info
debug = logger.debug
warning = logger.warning
error = logger.error


def add_file_handler(filepath=FILEPATH_LOG_PIPELINE):
    '''
    Mirror all log records into `filepath`. Calling it twice for the same
    file does not duplicate records.
    '''
    filepath = os.path.abspath(str(filepath))
    for handler in logger.handlers:
        if isinstance(handler, logging.FileHandler) and handler.baseFilename == filepath:
            return handler
    fh = logging.FileHandler(filepath)
    fh.setLevel(logging.INFO)
    fh.setFormatter(formatter)
    logger.addHandler(fh)
    return fh
