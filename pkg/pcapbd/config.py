import os
import pcapbd


FORMAT_LOGS_TIMESTAMP = "%Y-%m-%d %H:%M:%S,%f"

PATH_PACKAGE = list(pcapbd.__path__)[0]  # helper
PATH_TEMPLATES = os.path.join(PATH_PACKAGE, "templates")

FILEPATH_CONFIG_USER = "pcapbd_config.txt"
FILEPATH_CONFIG_TEMPLATE_ORIGINAL = os.path.join(PATH_PACKAGE, "pcapbd_default_config.txt")

FILEPATH_LOG_PIPELINE = "pipeline.log"

# default seed for every command when --seed is not given
ENV_VAR_SEED = "PCAPBD_SEED"

# file names written by `pcapbd synth`
FILENAME_BENIGN_PCAP = "benign.pcap"
FILENAME_ATTACK_PCAP = "{attack}.pcap"

# exit codes of the command line interface
EXIT_OK = 0
EXIT_DOMAIN_ERROR = 1
EXIT_USAGE_ERROR = 2
