"""Audit telemetry parsing, windowed aggregation and the synthetic baseline.

The synthetic baseline is a stand-in for an enterprise command collection: a
weighted grammar of administrative command shapes whose slots are filled from
pools of hosts, paths, services and the like.
"""

from __future__ import annotations

import math
import re
import string
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .records import BENIGN, CommandRecord, DataError

DEFAULT_WINDOW = 300.0


class AuditParseError(DataError):
    """A raw audit record could not be parsed into an EXECVE event."""


@dataclass(frozen=True)
class ExecveEvent:
    timestamp: float
    host: str
    parent_pid: int
    argc: int
    args: tuple[str, ...]

    def __post_init__(self) -> None:
        if self.argc < 1 or len(self.args) != self.argc:
            raise AuditParseError(f"argc={self.argc} does not match {len(self.args)} args")
        if self.parent_pid < 0:
            raise AuditParseError("parent_pid must be non-negative")

    @property
    def cmd(self) -> str:
        return " ".join(self.args)


# key=value where value is a double-quoted string or a bare token; fields may
# be glued together (a3="-u"a4="1.2.3.4") so the key itself is anchored on
# the preceding character rather than on whitespace.
_FIELD_RE = re.compile(r'([A-Za-z_][\w\[\]]*)=("[^"]*"|[^\s"]+)')
_TYPE_RE = re.compile(r"^\s*(?:node=(\S+)\s+)?type=(\w+)")
_MSG_RE = re.compile(r"msg=audit\(([^)]*)\)")
_HEX_RE = re.compile(r"^(?:[0-9A-Fa-f]{2})+$")
_ARG_RE = re.compile(r"^a(\d+)(?:\[(\d+)\])?$")


def _decode_value(raw: str) -> str:
    if len(raw) >= 2 and raw[0] == '"' and raw[-1] == '"':
        return raw[1:-1]
    if _HEX_RE.match(raw):
        return bytes.fromhex(raw).decode("utf-8", errors="replace")
    return raw


def parse_execve_record(line: str) -> ExecveEvent:
    """Parse one ``type=EXECVE`` audit line.

    Quoted argument values are taken verbatim; unquoted values are decoded as
    hex, which is how auditd encodes arguments with spaces or quotes. Long
    arguments split into ``aN[i]`` chunks are reassembled.
    """
    m = _TYPE_RE.match(line)
    if not m:
        raise AuditParseError("missing field: type")
    node, rtype = m.group(1), m.group(2)
    if rtype != "EXECVE":
        raise AuditParseError(f"not an EXECVE record (type={rtype})")

    timestamp = 0.0
    msg = _MSG_RE.search(line)
    if msg:
        stamp = msg.group(1).split(":", 1)[0]
        try:
            timestamp = float(stamp)
        except ValueError:
            timestamp = 0.0
    body = line[msg.end():] if msg else line[m.end():]

    fields: dict[str, str] = {}
    chunks: dict[int, dict[int, str]] = {}
    for key, raw in _FIELD_RE.findall(body):
        am = _ARG_RE.match(key)
        if am and am.group(2) is not None:
            chunks.setdefault(int(am.group(1)), {})[int(am.group(2))] = _decode_value(raw)
        else:
            fields[key] = raw

    if "argc" not in fields:
        raise AuditParseError("missing field: argc")
    try:
        argc = int(fields["argc"])
    except ValueError:
        raise AuditParseError(f"invalid argc: {fields['argc']!r}") from None
    if argc < 1:
        raise AuditParseError(f"invalid argc: {argc}")

    args = []
    for i in range(argc):
        key = f"a{i}"
        if key in fields:
            args.append(_decode_value(fields[key]))
        elif i in chunks:
            parts = chunks[i]
            args.append("".join(parts[j] for j in sorted(parts)))
        else:
            raise AuditParseError(f"missing field: {key}")

    host = node or _decode_value(fields.get("node", '""'))
    try:
        ppid = int(fields.get("ppid", "0"))
    except ValueError:
        raise AuditParseError(f"invalid ppid: {fields['ppid']!r}") from None
    return ExecveEvent(timestamp=timestamp, host=host, parent_pid=ppid, argc=argc, args=tuple(args))


def _needs_hex(arg: str) -> bool:
    return any(c in arg for c in ' "\'\\') or any(ord(c) < 0x21 or ord(c) > 0x7E for c in arg)


def format_execve_record(event: ExecveEvent, serial: int = 0) -> str:
    """Render an event the way auditd would (hex for awkward arguments)."""
    parts = []
    if event.host:
        parts.append(f"node={event.host}")
    parts.append(f"type=EXECVE msg=audit({event.timestamp:.3f}:{serial}): argc={event.argc}")
    for i, arg in enumerate(event.args):
        if _needs_hex(arg) or arg == "":
            parts.append(f"a{i}={arg.encode('utf-8').hex().upper()}" if arg else f'a{i}=""')
        else:
            parts.append(f'a{i}="{arg}"')
    parts.append(f"ppid={event.parent_pid}")
    return " ".join(parts)


def aggregate_window(events: Iterable[ExecveEvent], window: float = DEFAULT_WINDOW) -> list[str]:
    """Group events by (host, parent pid, time bin) and join each group's commands.

    Within a group the distinct command lines are joined with ``;`` in
    timestamp order. The result is globally deduplicated, keeping first
    occurrence, with groups ordered by their earliest event.
    """
    if window <= 0:
        raise ValueError("window must be positive")
    groups: dict[tuple[str, int, int], list[tuple[float, int, str]]] = {}
    for seq, ev in enumerate(events):
        key = (ev.host, ev.parent_pid, math.floor(ev.timestamp / window))
        groups.setdefault(key, []).append((ev.timestamp, seq, ev.cmd))

    ordered = sorted(groups.items(), key=lambda kv: (min(e[:2] for e in kv[1]), kv[0]))
    out: list[str] = []
    seen: set[str] = set()
    for _, evs in ordered:
        cmds: list[str] = []
        for _, _, cmd in sorted(evs):
            if cmd not in cmds:
                cmds.append(cmd)
        joined = ";".join(cmds)
        if joined not in seen:
            seen.add(joined)
            out.append(joined)
    return out


def read_command_lines(path: str | Path) -> list[str]:
    """Plain one-command-per-line corpus; blank lines dropped, order kept, deduplicated."""
    seen: set[str] = set()
    out = []
    with open(path, encoding="utf-8", errors="replace") as fh:
        for line in fh:
            cmd = line.strip()
            if cmd and cmd not in seen:
                seen.add(cmd)
                out.append(cmd)
    return out


def read_audit_log(path: str | Path, window: float = DEFAULT_WINDOW) -> list[str]:
    """Parse EXECVE lines of a raw audit log (other record types are skipped)."""
    events = []
    with open(path, encoding="utf-8", errors="replace") as fh:
        for line in fh:
            if "type=EXECVE" in line:
                events.append(parse_execve_record(line))
    return aggregate_window(events, window)


def baseline_records(cmds: Iterable[str], split: str = "train") -> list[CommandRecord]:
    return [CommandRecord(cmd=c, label=BENIGN, origin="baseline", split=split) for c in cmds]


# --------------------------------------------------------------------------
# synthetic baseline grammar
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class IntRange:
    low: int
    high: int  # inclusive

    def __len__(self) -> int:
        return self.high - self.low + 1


_USERS = ["deploy", "ubuntu", "ec2-user", "jenkins", "admin", "svc_backup", "postgres",
          "www-data", "ansible", "monitor", "gitlab-runner", "oracle", "nagios", "root"]
_SERVICES = ["nginx", "sshd", "docker", "cron", "rsyslog", "postgresql", "redis-server",
             "kubelet", "containerd", "auditd", "chronyd", "node_exporter", "haproxy",
             "mysqld", "elasticsearch", "filebeat", "systemd-journald", "snapd", "crond"]
_PACKAGES = ["openssl", "curl", "nginx", "python3", "libc6", "openssh-server", "bash",
             "sudo", "glibc", "kernel", "systemd", "tzdata", "ca-certificates", "zlib1g",
             "libssl3", "git", "vim", "docker-ce", "containerd.io", "htop", "jq", "rsync"]
_LOGS = ["syslog", "auth.log", "messages", "secure", "kern.log", "dmesg", "cron",
         "nginx/access.log", "nginx/error.log", "audit/audit.log", "apt/history.log",
         "yum.log", "dpkg.log", "postgresql/postgresql-14-main.log", "haproxy.log"]
_DIRS = ["/etc", "/var/log", "/opt/app", "/srv/www", "/usr/local/bin", "/var/lib/docker",
         "/home/deploy", "/etc/nginx/conf.d", "/var/backups", "/opt/monitoring",
         "/etc/systemd/system", "/var/lib/postgresql", "/usr/share/nginx/html",
         "/etc/cron.d", "/var/spool/cron", "/opt/app/releases", "/etc/ssl/certs", "/boot",
         "/var/cache/apt", "/etc/sysctl.d", "/run/containerd"]
_CONF_FILES = ["/etc/hosts", "/etc/resolv.conf", "/etc/fstab", "/etc/passwd", "/etc/group",
               "/etc/os-release", "/etc/nginx/nginx.conf", "/etc/ssh/sshd_config",
               "/etc/sysctl.conf", "/etc/crontab", "/etc/hostname", "/etc/ntp.conf",
               "/etc/security/limits.conf", "/opt/app/config.yaml", "/etc/environment",
               "/etc/logrotate.conf", "/etc/sudoers.d/90-cloud-init-users"]
_PROC_FILES = ["status", "maps", "cmdline", "stat", "limits", "io", "environ", "smaps",
               "fd", "cgroup", "mountinfo", "sched", "oom_score", "statm", "net/tcp"]
_PROC_GLOBAL = ["meminfo", "cpuinfo", "loadavg", "uptime", "mounts", "diskstats",
                "net/dev", "net/tcp", "net/udp", "vmstat", "swaps", "version", "stat",
                "sys/fs/file-nr", "sys/kernel/pid_max", "sys/vm/swappiness", "partitions"]
_CGROUPS = ["system.slice", "user.slice", "docker", "kubepods", "system.slice/docker.service",
            "system.slice/nginx.service", "kubepods/burstable", "init.scope"]
_MEM_STATS = ["usage_in_bytes", "limit_in_bytes", "stat", "max_usage_in_bytes",
              "failcnt", "memsw.usage_in_bytes", "soft_limit_in_bytes"]
_IFACES = ["eth0", "eth1", "ens3", "ens5", "lo", "docker0", "bond0", "enp0s3", "cni0"]
_NET_STATS = ["rx_bytes", "tx_bytes", "rx_errors", "tx_dropped", "rx_packets", "tx_packets"]
_BLOCKS = ["sda", "sdb", "nvme0n1", "xvda", "vda", "dm-0"]
_HOSTNAMES = ["db01.corp.local", "web-03.internal", "git.corp.local", "ldap.corp.local",
              "repo.internal", "mirror.centos.org", "archive.ubuntu.com", "ntp.corp.local",
              "vault.internal", "registry.corp.local", "kafka-2.internal", "api.internal"]
_COMMON_PORTS = ["22", "80", "443", "2379", "3306", "5432", "5672", "6379", "8080",
                 "8443", "9090", "9100", "9200", "11211", "27017", "8500", "53", "25"]
_PATTERNS = ["error", "ERROR", "failed", "timeout", "denied", "Accepted", "session opened",
             "OOM", "segfault", "warning", "refused", "Started", "panic", "disk full"]
_WORDS = ["backup", "report", "cache", "session", "upload", "build", "release", "index",
          "dump", "export", "metrics", "snapshot", "archive", "data", "tmp", "work",
          "deploy", "state", "lock", "run", "job", "batch", "nightly", "sync"]
_ENV_VARS = ["HOME", "PATH", "USER", "SHELL", "LANG", "JAVA_HOME", "APP_ENV", "TZ",
             "PWD", "HOSTNAME", "LOG_LEVEL", "KUBECONFIG", "GOPATH", "PYTHONPATH"]
_SHELL_VARS = ["dir", "host", "file", "i", "f", "line", "pid", "svc", "name", "out",
               "ts", "n", "d", "log", "tmp", "user", "count", "node", "src", "dst"]
_CONTAINERS = ["web", "api", "worker", "redis", "postgres", "nginx-proxy", "grafana",
               "prometheus", "cadvisor", "node-exporter", "sidecar", "scheduler"]
_NAMESPACES = ["default", "kube-system", "monitoring", "ingress-nginx", "prod", "staging"]
_KEYS = ["status", "version", "id", "name", "host", "port", "count", "items", "state"]
_PROCS = ["java", "python3", "node", "nginx", "postgres", "dockerd", "sshd", "gunicorn",
          "redis-server", "kubelet", "containerd-shim", "php-fpm", "celery", "uwsgi"]
_SCRIPTS = ["healthcheck", "rotate_logs", "backup_db", "sync_assets", "collect_metrics",
            "cleanup", "renew_certs", "inventory", "deploy", "warmup_cache"]
_AGENTS = ["/opt/datadog-agent/bin/agent/agent", "/usr/bin/falcon-sensor",
           "/opt/microsoft/mdatp/sbin/wdavdaemon", "/usr/sbin/zabbix_agentd",
           "/opt/puppetlabs/bin/puppet", "/usr/bin/salt-call", "/usr/local/bin/node_exporter"]


def _ip_pool(rng: np.random.Generator | None = None) -> list[str]:
    # deterministic list of internal addresses
    out = []
    for a in (1, 2, 3, 10, 20, 30, 40, 50, 60, 100, 128, 200, 250):
        for b in (1, 2, 5, 10, 11, 12, 20, 33, 44, 64, 101, 254):
            out.append(f"10.{a}.{b}.{(a * 7 + b * 13) % 250 + 2}")
    for c in range(0, 16):
        for d in (1, 5, 10, 11, 20, 50, 100, 101, 150, 200, 250):
            out.append(f"192.168.{c}.{d}")
    for b in range(16, 32):
        for d in (1, 2, 10, 40, 100):
            out.append(f"172.{b}.{b % 5}.{d}")
    out += ["127.0.0.1", "8.8.8.8", "1.1.1.1", "169.254.169.254"]
    return out


_IPS = _ip_pool()

SLOTS: dict[str, Sequence[str] | IntRange] = {
    "user": _USERS, "user2": _USERS, "svc": _SERVICES, "pkg": _PACKAGES, "log": _LOGS,
    "dir": _DIRS, "dir2": _DIRS, "conf": _CONF_FILES, "procfile": _PROC_FILES,
    "procglobal": _PROC_GLOBAL, "cgroup": _CGROUPS, "memstat": _MEM_STATS,
    "iface": _IFACES, "netstat": _NET_STATS, "block": _BLOCKS, "hostname": _HOSTNAMES,
    "port": _COMMON_PORTS, "pattern": _PATTERNS, "word": _WORDS, "word2": _WORDS,
    "env": _ENV_VARS, "var": _SHELL_VARS, "container": _CONTAINERS, "ns": _NAMESPACES,
    "key": _KEYS, "proc": _PROCS, "script": _SCRIPTS, "agent": _AGENTS, "ip": _IPS,
    "ip2": _IPS, "pid": IntRange(300, 65535), "n": IntRange(1, 60), "n2": IntRange(1, 500),
    "mode": ["600", "640", "644", "700", "750", "755", "775"],
    "size": ["1M", "10M", "100M", "1G", "500k"],
    "sig": ["HUP", "TERM", "USR1", "9", "15"],
}


@dataclass(frozen=True)
class Shape:
    name: str
    weight: float
    forms: tuple[str, ...]

    def slots_of(self, form: str) -> list[str]:
        return sorted({f for _, f, _, _ in string.Formatter().parse(form) if f})

    def capacity(self, slots: Mapping[str, Sequence[str] | IntRange]) -> int:
        total = 0
        for form in self.forms:
            total += math.prod(len(slots[s]) for s in self.slots_of(form))
        return total


# Roughly twenty shapes of day-to-day administration as seen in audit telemetry.
DEFAULT_SHAPES: tuple[Shape, ...] = (
    Shape("listing", 6, ("ls -la {dir}", "ls -lh {dir}/{word}", "ls -1 {dir}", "ls -ld {dir}/{word}.d",
                         "stat {conf}", "ls -la /dev/shm", "ls -la /var/tmp/{word}", "file {dir}/{word}.bin",
                         "du -sh {dir}/{word}", "find {dir} -name '*.log' -mtime +{n} -delete",
                         "find {dir} -type f -size +{size}", "find {dir} -maxdepth {n} -type d -name {word}")),
    Shape("proc_read", 9, ("cat /proc/{pid}/{procfile}", "cat /proc/{procglobal}", "head -n {n} /proc/{pid}/{procfile}",
                           "readlink /proc/{pid}/exe", "ls -l /proc/{pid}/fd", "grep VmRSS /proc/{pid}/status",
                           "cat /proc/{pid}/task/{pid}/stat")),
    Shape("sys_read", 8, ("cat /sys/fs/cgroup/memory/{cgroup}/memory.{memstat}",
                          "cat /sys/class/net/{iface}/statistics/{netstat}", "cat /sys/block/{block}/stat",
                          "cat /sys/fs/cgroup/cpu/{cgroup}/cpu.shares", "cat /sys/class/net/{iface}/operstate",
                          "cat /sys/fs/cgroup/pids/{cgroup}/pids.current", "cat /sys/block/{block}/queue/scheduler")),
    Shape("logs", 7, ("grep -i '{pattern}' /var/log/{log}", "tail -n {n2} /var/log/{log}",
                      "grep -c {word} /var/log/{log}", "zcat /var/log/{log}.{n}.gz", "tail -F /var/log/{log}",
                      "journalctl -u {svc} --since '{n} min ago' --no-pager", "journalctl -p err -n {n2} --no-pager",
                      "less /var/log/{log}", "grep -rn '{pattern}' {dir}")),
    Shape("packages", 5, ("dpkg -l {pkg}", "rpm -qa {pkg}", "apt-cache policy {pkg}", "rpm -q --changelog {pkg}",
                          "yum info {pkg}", "dpkg -s {pkg}", "apt list --installed {pkg}", "dnf check-update {pkg}",
                          "/usr/bin/dpkg --compare-versions {n}.{n2} gt {n}.{n}")),
    Shape("process", 7, ("ps -eo pid,ppid,cmd,%mem --sort=-%mem", "ps -p {pid} -o pid,etime,cmd", "pgrep -f {proc}",
                         "pgrep -u {user} {proc}", "top -b -n 1 -p {pid}", "pidof {proc}", "kill -{sig} {pid}",
                         "lsof -p {pid}", "pstree -p {pid}", "ps aux", "renice -n {n} -p {pid}",
                         "strace -c -p {pid}", "nice -n {n} {proc}")),
    Shape("services", 6, ("systemctl status {svc}", "systemctl is-active {svc}", "systemctl restart {svc}",
                          "systemctl show {svc} --property=MainPID", "service {svc} reload",
                          "/bin/systemctl is-enabled {svc}.service", "systemctl list-units --type=service --state={word}")),
    Shape("network", 8, ("ping -c {n} {ip}", "ping -c 1 -W {n} {hostname}", "ssh -p {port} {user}@{ip} uptime",
                         "ssh {user}@{hostname} 'systemctl is-active {svc}'", "curl -s http://{ip}:{port}/health",
                         "curl -sf https://{hostname}/api/{key} -o /tmp/{word}.json", "nc -zv {ip} {port}",
                         "nc -z -w {n} {hostname} {port}", "nslookup {hostname}", "dig +short {hostname}",
                         "ip addr show {iface}", "ip route get {ip}", "ss -tlnp", "ss -tn state established '( dport = :{port} )'",
                         "traceroute -n {ip}", "telnet {hostname} {port}", "wget -q -O /tmp/{word}.tar.gz http://{ip}:{port}/{word}.tar.gz",
                         "arp -n {ip}", "tcpdump -i {iface} -c {n2} port {port}", "scp /tmp/{word}.tar.gz {user}@{ip}:/var/backups/",
                         "rsync -az {dir}/ {user}@{ip}:{dir2}/", "iptables -C INPUT -s {ip} -j ACCEPT",
                         "curl -s --connect-timeout {n} {ip}:{port}")),
    Shape("file_ops", 7, ("cp {conf} /tmp/{word}.bak", "mv /tmp/{word}.tmp {dir}/{word2}", "rm -f /tmp/{word}.{n}.lock",
                          "chmod {mode} {dir}/{word}", "chown {user}:{user2} {dir}/{word}", "mkdir -p {dir}/{word}/{word2}",
                          "touch /var/tmp/{word}.{n}", "tar -czf /tmp/{word}-{n2}.tar.gz {dir}", "ln -sf {dir}/{word} {dir2}/{word}",
                          "rm -rf /tmp/{word}.{pid}", "cp -a {dir}/{word} /var/backups/{word2}", "truncate -s 0 /var/log/{log}",
                          "gzip -9 /var/tmp/{word}.{n}", "md5sum {conf}", "sha256sum /tmp/{word}.tar.gz")),
    Shape("shell_wrapped", 7, ("/bin/sh -c 'cat /proc/{pid}/{procfile}'", "sh -c 'systemctl is-active {svc}'",
                               "/bin/sh -c 'ps -p {pid} > /dev/null 2>&1'", "bash -c 'source /etc/profile; {proc} --version'",
                               "/bin/bash -c \"grep -q {word} {conf} || echo missing\"",
                               "/bin/sh -c \"df -P {dir} | tail -1\"", "sh -c 'exec {agent} --check {word}'",
                               "/bin/sh -c 'test -f /var/run/{svc}.pid && kill -0 $(cat /var/run/{svc}.pid)'",
                               "bash -lc 'cd {dir} && ls -t | head -n {n}'", "/bin/sh -c '/usr/lib/{svc}/{script}.sh > /dev/null 2>&1'")),
    Shape("interpreters", 5, ("python3 -c 'import json,sys; print(json.load(sys.stdin)[\"{key}\"])'",
                              "/usr/bin/python3 /opt/app/{script}.py --config /etc/{word}/{word2}.yaml",
                              "python3 -m pip show {pkg}", "perl -ne 'print if /{word}/' /var/log/{log}",
                              "python -c 'import platform; print(platform.node())'", "/usr/bin/perl -w /usr/local/bin/{script}.pl",
                              "python3 -m json.tool /tmp/{word}.json", "php -r 'echo phpversion();'",
                              "ruby -e 'puts File.read(\"{conf}\").lines.count'", "node /opt/app/{script}.js --port {port}")),
    Shape("text", 6, ("awk '{{print ${n}}}' /var/log/{log}", "awk -F: '{{print $1}}' /etc/passwd", "sed -n '{n},{n2}p' {conf}",
                      "cut -d' ' -f{n} /var/log/{log}", "sort -u /tmp/{word}.txt", "wc -l /var/log/{log}",
                      "sed -i 's/{word}/{word2}/g' {dir}/{word}.conf", "awk '/{word}/ {{c++}} END {{print c}}' /var/log/{log}",
                      "head -c {n2} /tmp/{word}.{n}", "diff {conf} /var/backups/{word}.conf", "jq -r '.{key}' /tmp/{word}.json")),
    Shape("env", 4, ("export {env}={dir}", "echo ${env}", "env | grep {env}", "printenv {env}",
                     "for {var} in {dir}/*; do echo ${var}; done", "{var}=$(date +%s); echo ${var}",
                     "export {env}=/opt/{word}/{word2}", "echo \"${env}\" >> /tmp/{word}.env",
                     "while read {var}; do echo ${var}; done < /tmp/{word}.txt", "unset {env}")),
    Shape("containers", 5, ("docker ps --filter name={container}", "docker logs --tail {n2} {container}",
                            "docker inspect -f '{{{{.State.Status}}}}' {container}", "docker exec {container} cat /etc/{word}.conf",
                            "kubectl get pods -n {ns}", "kubectl logs -n {ns} {container}-{pid}", "crictl ps --name {container}",
                            "docker stats --no-stream {container}", "kubectl describe node worker-{n}",
                            "docker run --rm -p {port}:{port} registry.corp.local/{container}:{n}.{n2}")),
    Shape("agents", 6, ("{agent} status", "{agent} --check {word}", "/usr/sbin/logrotate /etc/logrotate.d/{svc}",
                        "/usr/lib/{svc}/{script}.sh", "/opt/app/bin/{script} --interval {n}",
                        "/usr/bin/flock -n /var/run/{script}.lock /usr/local/bin/{script}.sh",
                        "/usr/lib/sysstat/sadc -F -L -S DISK {n} {n2} /var/log/sysstat",
                        "/usr/sbin/chronyc tracking", "/usr/bin/run-parts --report /etc/cron.{word}")),
    Shape("pipes", 6, ("cat /var/log/{log} | grep {word} | wc -l", "ps aux | grep {proc} | grep -v grep",
                       "netstat -an | grep :{port}", "ss -tanp | grep {ip}", "cat /proc/{pid}/{procfile} | head -n {n}",
                       "dmesg | tail -n {n2}", "df -h | grep {block}", "lsof -i :{port} | grep LISTEN",
                       "find {dir} -type f | xargs du -sh | sort -h | tail -n {n}", "last -n {n} | grep {user}")),
    Shape("identity", 3, ("id {user}", "whoami", "hostname -f", "uname -a", "uptime", "w", "getent passwd {user}",
                          "sudo -u {user} id", "groups {user}", "last -n {n}", "who -b", "lastlog -u {user}",
                          "su - {user} -c 'id'", "passwd -S {user}")),
    Shape("redirects", 5, ("echo {n2} > /proc/sys/vm/{word}", "{proc} --version 2>&1", "ls {dir} > /dev/null 2>&1",
                           "echo '{word}' >> /var/log/{word2}.log", "date >> /tmp/{word}.log 2>&1", "cat {conf} 2>/dev/null",
                           "exec {n}>/var/run/{script}.lock", "echo {pid} > /var/run/{svc}.pid",
                           "logger -t {script} '{pattern}' 2>&1")),
    Shape("vcs_deploy", 3, ("git -C /opt/{word} pull --ff-only", "git -C /opt/app/releases/{n2} rev-parse HEAD",
                            "ansible-playbook -i /etc/ansible/hosts {script}.yml --limit {hostname}",
                            "salt-call state.apply {word}", "puppet agent -t --noop", "helm upgrade {container} ./charts/{container} -n {ns}")),
    Shape("scheduling", 2, ("crontab -l -u {user}", "at -l", "systemctl list-timers --all", "cat /etc/cron.d/{word}",
                            "/usr/sbin/anacron -s", "flock -x /tmp/{word}.lock -c '/opt/app/bin/{script}'")),
)

_CHAIN_SHAPE = "window_chain"


@dataclass
class BaselineGrammar:
    shapes: tuple[Shape, ...] = DEFAULT_SHAPES
    slots: Mapping[str, Sequence[str] | IntRange] = field(default_factory=lambda: dict(SLOTS))
    weights: Mapping[str, float] | None = None
    chain_weight: float = 8.0
    max_chain: int = 3

    def shape_weights(self) -> dict[str, float]:
        w = {s.name: s.weight for s in self.shapes}
        w[_CHAIN_SHAPE] = self.chain_weight
        if self.weights:
            unknown = set(self.weights) - set(w)
            if unknown:
                raise ValueError(f"unknown baseline shapes: {sorted(unknown)}")
            w.update(self.weights)
        if any(v < 0 for v in w.values()) or sum(w.values()) <= 0:
            raise ValueError("shape weights must be non-negative with a positive sum")
        return w

    def capacity(self) -> int:
        """Upper bound on the number of distinct strings the grammar can emit."""
        w = self.shape_weights()
        simple = sum(s.capacity(self.slots) for s in self.shapes if w[s.name] > 0)
        if w[_CHAIN_SHAPE] > 0:
            all_simple = sum(s.capacity(self.slots) for s in self.shapes)
            simple += sum(all_simple ** k for k in range(2, self.max_chain + 1))
        return simple

    def _fill(self, form: str, rng: np.random.Generator, shape: Shape) -> str:
        values = {}
        for slot in shape.slots_of(form):
            pool = self.slots[slot]
            if isinstance(pool, IntRange):
                values[slot] = str(int(rng.integers(pool.low, pool.high + 1)))
            else:
                values[slot] = pool[int(rng.integers(len(pool)))]
        return form.format(**values)

    def _simple(self, shape: Shape, rng: np.random.Generator) -> str:
        form = shape.forms[int(rng.integers(len(shape.forms)))]
        return self._fill(form, rng, shape)

    def sample(self, rng: np.random.Generator, names: list[str], probs: np.ndarray) -> str:
        name = names[int(rng.choice(len(names), p=probs))]
        if name == _CHAIN_SHAPE:
            k = int(rng.integers(2, self.max_chain + 1))
            parts = []
            for _ in range(k):
                shape = self.shapes[int(rng.integers(len(self.shapes)))]
                parts.append(self._simple(shape, rng))
            return ";".join(parts)
        shape = next(s for s in self.shapes if s.name == name)
        return self._simple(shape, rng)


def generate_synthetic_baseline(
    n: int,
    seed: int,
    weights: Mapping[str, float] | None = None,
    split: str = "train",
    grammar: BaselineGrammar | None = None,
) -> list[CommandRecord]:
    """Draw ``n`` unique benign command lines from the baseline grammar.

    Output is fully determined by ``seed`` (and the grammar/weights).
    """
    if n <= 0:
        raise ValueError(f"n must be positive, got {n}")
    grammar = grammar or BaselineGrammar(weights=weights)
    cap = grammar.capacity()
    if n > cap:
        raise ValueError(f"requested {n} unique commands but the grammar can produce at most {cap}")

    w = grammar.shape_weights()
    names = sorted(k for k, v in w.items() if v > 0)
    probs = np.array([w[k] for k in names], dtype=float)
    probs /= probs.sum()

    rng = np.random.default_rng(seed)
    seen: set[str] = set()
    out: list[str] = []
    budget = max(50 * n, 10_000)
    for _ in range(budget):
        cmd = grammar.sample(rng, names, probs)
        if cmd not in seen:
            seen.add(cmd)
            out.append(cmd)
            if len(out) == n:
                return baseline_records(out, split)
    raise ValueError(
        f"requested {n} unique commands but only {len(out)} could be drawn "
        f"(grammar bound {cap}); lower n or widen the shape weights"
    )
